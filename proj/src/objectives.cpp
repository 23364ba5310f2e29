#include "lacgan/objectives.hpp"

#include <cmath>

#include "lacgan/errors.hpp"

namespace lacgan {

namespace {

void check_same_shape(const torch::Tensor& a, const torch::Tensor& b, const char* what) {
  if (!a.sizes().equals(b.sizes())) {
    fail(ErrorKind::Shape, std::string(what) + ": operand shapes differ");
  }
}

torch::Tensor safe_log(const torch::Tensor& p) {
  return torch::log(p.clamp(kProbEpsilon, 1.0 - kProbEpsilon));
}

}  // namespace

torch::Tensor generator_adv_loss(const torch::Tensor& d_fake) { return -safe_log(d_fake).mean(); }

torch::Tensor discriminator_adv_loss(const torch::Tensor& d_real, const torch::Tensor& d_fake,
                                     const std::optional<torch::Tensor>& real_mask) {
  auto real = -safe_log(d_real);
  auto real_term = real_mask ? (real * *real_mask).sum() / real_mask->sum().clamp_min(1.0)
                             : real.mean();
  return real_term - safe_log(1.0 - d_fake).mean();
}

namespace {

AdversarialTerms cross_entropy(const torch::Tensor& d_real, const torch::Tensor& d_fake) {
  return {discriminator_adv_loss(d_real, d_fake), generator_adv_loss(d_fake)};
}

}  // namespace

void LossWeights::validate(std::size_t n_aus, std::size_t levels) const {
  for (double v : {lambda1, lambda2, lambda3, lambda4, lambda_au, lambda_img}) {
    require(v >= 0.0 && std::isfinite(v), ErrorKind::Config, "loss weights must be non-negative");
  }
  require(beta.empty() || beta.size() == n_aus, ErrorKind::Config,
          "beta needs one weight per configured AU");
  require(alpha.size() == levels, ErrorKind::Config, "alpha needs one weight per identity level");
  for (double v : beta) require(v >= 0.0, ErrorKind::Config, "beta weights must be non-negative");
  for (double v : alpha) require(v >= 0.0, ErrorKind::Config, "alpha weights must be non-negative");
}

nlohmann::json LossWeights::to_json() const {
  return {{"lambda1", lambda1},     {"lambda2", lambda2},     {"lambda3", lambda3},
          {"lambda4", lambda4},     {"lambda_au", lambda_au}, {"lambda_img", lambda_img},
          {"beta", beta},           {"alpha", alpha}};
}

LossWeights LossWeights::from_json(const nlohmann::json& j) {
  LossWeights w;
  try {
    w.lambda1 = j.value("lambda1", w.lambda1);
    w.lambda2 = j.value("lambda2", w.lambda2);
    w.lambda3 = j.value("lambda3", w.lambda3);
    w.lambda4 = j.value("lambda4", w.lambda4);
    w.lambda_au = j.value("lambda_au", w.lambda_au);
    w.lambda_img = j.value("lambda_img", w.lambda_img);
    w.beta = j.value("beta", w.beta);
    w.alpha = j.value("alpha", w.alpha);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::Config, std::string("loss weights: ") + e.what());
  }
  return w;
}

torch::Tensor pixel_loss(const torch::Tensor& recon, const torch::Tensor& target) {
  check_same_shape(recon, target, "pixel_loss");
  return (recon - target).abs().mean();
}

torch::Tensor pixel_loss(const torch::Tensor& recon, const torch::Tensor& target,
                         const torch::Tensor& sample_mask) {
  check_same_shape(recon, target, "pixel_loss");
  require(sample_mask.dim() == 1 && sample_mask.size(0) == recon.size(0), ErrorKind::Shape,
          "pixel_loss: mask must have one entry per sample");
  const auto per_sample = (recon - target).abs().flatten(1).mean(1);
  const auto count = sample_mask.sum();
  return (per_sample * sample_mask).sum() / count.clamp_min(1.0);
}

AdversarialTerms latent_adv_losses(const torch::Tensor& d_prior, const torch::Tensor& d_encoded) {
  return cross_entropy(d_prior, d_encoded);
}

AdversarialTerms global_adv_loss(const torch::Tensor& d_real, const torch::Tensor& d_fake) {
  return cross_entropy(d_real, d_fake);
}

torch::Tensor label_loss(const torch::Tensor& regression, const torch::Tensor& target_pairs,
                         const std::optional<torch::Tensor>& sample_mask) {
  check_same_shape(regression, target_pairs, "label_loss");
  const auto per_sample = (regression - target_pairs).pow(2).sum(1);
  if (!sample_mask) return per_sample.mean();
  return (per_sample * *sample_mask).sum() / sample_mask->sum().clamp_min(1.0);
}

LocalTerms local_adv_and_label_loss(const torch::Tensor& d_real, const torch::Tensor& d_fake,
                                    const torch::Tensor& reg_on_fake,
                                    const torch::Tensor& target_pairs) {
  check_label_pairs(target_pairs);
  const auto adv = cross_entropy(d_real, d_fake);
  return {adv.disc, adv.gen, label_loss(reg_on_fake, target_pairs)};
}

torch::Tensor identity_loss(const FeaturePyramid& p_t, const FeaturePyramid& p_r,
                            const std::vector<double>& alpha) {
  require(p_t.size() == p_r.size() && p_t.size() == alpha.size(), ErrorKind::Shape,
          "identity_loss: pyramid levels and alpha weights must align");
  require(!p_t.empty(), ErrorKind::Shape, "identity_loss: empty pyramid");
  auto loss = torch::zeros({}, p_t.front().options());
  for (std::size_t l = 0; l < p_t.size(); ++l) {
    check_same_shape(p_t[l], p_r[l], "identity_loss");
    loss = loss + alpha[l] * (p_t[l] - p_r[l]).abs().mean();
  }
  return loss;
}

torch::Tensor tv_loss(const torch::Tensor& image) {
  require(image.dim() >= 2, ErrorKind::Shape, "tv_loss: need at least two dimensions");
  const auto h = image.size(-2);
  const auto w = image.size(-1);
  require(h * w >= 2, ErrorKind::Shape, "tv_loss: degenerate 1x1 image");
  const auto lead = image.numel() / (h * w);
  auto sum = torch::zeros({}, image.options());
  if (w > 1) sum = sum + (image.narrow(-1, 1, w - 1) - image.narrow(-1, 0, w - 1)).abs().sum();
  if (h > 1) sum = sum + (image.narrow(-2, 1, h - 1) - image.narrow(-2, 0, h - 1)).abs().sum();
  const auto pairs = lead * (h * (w - 1) + (h - 1) * w);
  return sum / static_cast<double>(pairs);
}

void LossReport::check_finite() const {
  auto check = [](double v, const std::string& name) {
    if (!std::isfinite(v)) fail(ErrorKind::Divergence, "non-finite loss term " + name);
  };
  for (const auto& c : cargs) {
    const auto n = au_name(c.au);
    check(c.pixel, n + ".pixel");
    check(c.adv_z, n + ".adv_z");
    check(c.adv_au, n + ".adv_au");
    check(c.label, n + ".label");
  }
  check(id, "id");
  check(tv, "tv");
  check(img_adv, "img_adv");
  check(discriminator, "discriminator");
  check(total, "total");
}

nlohmann::json LossReport::to_json() const {
  nlohmann::json j = nlohmann::json::object();
  j["step"] = step;
  for (const auto& c : cargs) {
    const auto n = au_name(c.au);
    j["pixel_" + n] = c.pixel;
    j["adv_z_" + n] = c.adv_z;
    j["adv_au_" + n] = c.adv_au;
    j["label_" + n] = c.label;
  }
  j["id"] = id;
  j["tv"] = tv;
  j["img_adv"] = img_adv;
  j["generator"] = generator;
  j["discriminator"] = discriminator;
  j["total"] = total;
  return j;
}

std::string LossReport::to_line() const { return to_json().dump(); }

LossReport total_objective(std::vector<CargTerms> cargs, double id, double tv, double img_adv,
                           const LossWeights& weights) {
  LossReport r;
  double sum = 0.0;
  for (std::size_t i = 0; i < cargs.size(); ++i) {
    auto& c = cargs[i];
    c.carg = carg_objective(c.pixel, c.adv_z, c.adv_au, weights);
    sum += weights.beta_at(i) * c.carg;
  }
  r.cargs = std::move(cargs);
  r.id = id;
  r.tv = tv;
  r.img_adv = img_adv;
  r.total = sum + weights.lambda3 * id + weights.lambda4 * tv;
  r.generator = r.total + weights.lambda_img * img_adv;
  return r;
}

}  // namespace lacgan
