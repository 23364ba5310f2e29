#include "lacgan/models.hpp"

#include <cstdio>
#include <filesystem>
#include <set>

#include "lacgan/errors.hpp"

namespace lacgan {

namespace {

constexpr double kLeakySlope = 0.2;

int ceil_half(int n, int times) {
  for (int i = 0; i < times; ++i) n = (n + 1) / 2;
  return n;
}

torch::nn::Conv2d conv5(int in, int out, int stride) {
  return torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, 5).stride(stride).padding(2));
}

torch::Tensor leaky(const torch::Tensor& x) {
  return torch::leaky_relu(x, kLeakySlope);
}

void check_batch(const torch::Tensor& x, int channels, int height, int width, const char* what) {
  if (x.dim() != 4 || x.size(1) != channels || x.size(2) != height || x.size(3) != width) {
    std::string got = "(";
    for (int64_t d = 0; d < x.dim(); ++d) got += (d ? ", " : "") + std::to_string(x.size(d));
    got += ")";
    fail(ErrorKind::Shape, std::string(what) + ": expected (B, " + std::to_string(channels) +
                               ", " + std::to_string(height) + ", " + std::to_string(width) +
                               "), got " + got);
  }
}

void check_vectors(const torch::Tensor& x, int dim, const char* what) {
  if (x.dim() != 2 || x.size(1) != dim) {
    fail(ErrorKind::Shape, std::string(what) + ": expected (B, " + std::to_string(dim) + ")");
  }
}

}  // namespace

// --- labels --------------------------------------------------------------------

std::array<float, 2> AuTargetVector::pair(AuState state) noexcept {
  return state == AuState::Present ? std::array<float, 2>{-1.0f, 1.0f}
                                   : std::array<float, 2>{1.0f, -1.0f};
}

torch::Tensor AuTargetVector::embed(Au au, int dim) const {
  const std::array<AuState, 1> one{states[au_index(au)]};
  return embed_pairs(label_pairs(one), dim).squeeze(0);
}

torch::Tensor label_pairs(std::span<const AuState> states, torch::Dtype dtype) {
  auto out = torch::empty({static_cast<long>(states.size()), 2}, torch::kFloat32);
  auto acc = out.accessor<float, 2>();
  for (std::size_t i = 0; i < states.size(); ++i) {
    const auto p = AuTargetVector::pair(states[i]);
    acc[i][0] = p[0];
    acc[i][1] = p[1];
  }
  return out.to(dtype);
}

torch::Tensor embed_pairs(const torch::Tensor& pairs, int dim) {
  require(dim > 0 && dim % 2 == 0, ErrorKind::Config, "label embedding dimension must be even");
  check_vectors(pairs, 2, "embed_pairs");
  return pairs.repeat({1, dim / 2});
}

void check_label_pairs(const torch::Tensor& pairs) {
  if (pairs.dim() != 2 || pairs.size(1) != 2) {
    fail(ErrorKind::Contract, "AU label must be a (B, 2) tensor of +-1 pairs");
  }
  auto p = pairs.detach().to(torch::kFloat64);
  const bool valid = ((p.select(1, 0) + p.select(1, 1)).abs().max().item<double>() == 0.0) &&
                     ((p.abs() - 1.0).abs().max().item<double>() == 0.0);
  if (!valid) fail(ErrorKind::Contract, "AU label rows must be (+1, -1) or (-1, +1)");
}

// --- config --------------------------------------------------------------------

void ModelConfig::validate() const {
  require(image_size >= 8, ErrorKind::Config, "image_size must be >= 8");
  require(roi_size >= 4 && roi_size <= image_size, ErrorKind::Config,
          "roi_size must be in [4, image_size]");
  require(latent_dim > 0, ErrorKind::Config, "latent_dim must be positive");
  require(label_dim > 0 && label_dim % 2 == 0, ErrorKind::Config,
          "label_dim must be positive and even");
  auto positive = [](const auto& widths) {
    for (int w : widths) {
      if (w <= 0) return false;
    }
    return true;
  };
  require(positive(encoder_widths) && positive(latent_disc_widths) &&
              positive(global_disc_widths) && positive(identity_widths),
          ErrorKind::Config, "layer widths must be positive");
  require(!aus.empty(), ErrorKind::Config, "at least one AU must be configured");
  std::set<Au> unique(aus.begin(), aus.end());
  require(unique.size() == aus.size(), ErrorKind::Config, "duplicate AU in configuration");
}

nlohmann::json ModelConfig::to_json() const {
  nlohmann::json j;
  j["image_size"] = image_size;
  j["roi_size"] = roi_size;
  j["latent_dim"] = latent_dim;
  j["label_dim"] = label_dim;
  j["encoder_widths"] = encoder_widths;
  j["latent_disc_widths"] = latent_disc_widths;
  j["global_disc_widths"] = global_disc_widths;
  j["identity_widths"] = identity_widths;
  std::vector<std::string> names;
  for (Au au : aus) names.push_back(au_name(au));
  j["aus"] = names;
  return j;
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
  ModelConfig c;
  try {
    c.image_size = j.value("image_size", c.image_size);
    c.roi_size = j.value("roi_size", c.roi_size);
    c.latent_dim = j.value("latent_dim", c.latent_dim);
    c.label_dim = j.value("label_dim", c.label_dim);
    c.encoder_widths = j.value("encoder_widths", c.encoder_widths);
    c.latent_disc_widths = j.value("latent_disc_widths", c.latent_disc_widths);
    c.global_disc_widths = j.value("global_disc_widths", c.global_disc_widths);
    c.identity_widths = j.value("identity_widths", c.identity_widths);
    if (j.contains("aus")) {
      c.aus.clear();
      for (const auto& name : j.at("aus")) c.aus.push_back(parse_au(name.get<std::string>()));
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::Config, std::string("model config: ") + e.what());
  }
  c.validate();
  return c;
}

std::string ModelConfig::hash() const {
  const std::string text = to_json().dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

// --- encoder -------------------------------------------------------------------

EncoderImpl::EncoderImpl(const ModelConfig& config) : roi_size_(config.roi_size) {
  int in = 3;
  for (int i = 0; i < 5; ++i) {
    convs_.push_back(register_module("conv" + std::to_string(i),
                                     conv5(in, config.encoder_widths[i], 2)));
    in = config.encoder_widths[i];
  }
  const int side = ceil_half(config.roi_size, 5);
  projection = register_module(
      "projection", torch::nn::Linear(in * side * side, config.latent_dim));
}

torch::Tensor EncoderImpl::forward(const torch::Tensor& roi) {
  check_batch(roi, 3, roi_size_, roi_size_, "encode");
  auto x = roi;
  for (auto& conv : convs_) x = leaky(conv->forward(x));
  return torch::tanh(projection->forward(x.flatten(1)));
}

// --- decoder -------------------------------------------------------------------

DecoderImpl::DecoderImpl(const ModelConfig& config)
    : latent_dim_(config.latent_dim), label_dim_(config.label_dim) {
  // Upsample by 2 as many times as the ROI size allows (at most 5); the
  // remaining transposed convolutions keep the resolution.
  int upsamples = 0;
  int side = config.roi_size;
  while (upsamples < 5 && side % 2 == 0 && side > 1) {
    side /= 2;
    ++upsamples;
  }
  base_size_ = side;
  base_channels_ = config.encoder_widths[4];
  expand_ = register_module(
      "expand", torch::nn::Linear(config.latent_dim + config.label_dim,
                                  base_channels_ * base_size_ * base_size_));
  const std::array<int, 6> channels = {config.encoder_widths[4], config.encoder_widths[3],
                                       config.encoder_widths[2], config.encoder_widths[1],
                                       config.encoder_widths[0], 3};
  for (int i = 0; i < 5; ++i) {
    const int stride = i < upsamples ? 2 : 1;
    deconvs_.push_back(register_module(
        "deconv" + std::to_string(i),
        torch::nn::ConvTranspose2d(torch::nn::ConvTranspose2dOptions(channels[i], channels[i + 1], 5)
                                       .stride(stride)
                                       .padding(2)
                                       .output_padding(stride - 1))));
  }
}

torch::Tensor DecoderImpl::forward(const torch::Tensor& z, const torch::Tensor& label_embedding) {
  auto x = expand_->forward(torch::cat({z, label_embedding}, 1));
  x = torch::relu(x).view({-1, base_channels_, base_size_, base_size_});
  for (std::size_t i = 0; i < deconvs_.size(); ++i) {
    x = deconvs_[i]->forward(x);
    x = i + 1 < deconvs_.size() ? torch::relu(x) : torch::tanh(x);
  }
  return x;
}

// --- latent discriminator -----------------------------------------------------------

LatentDiscriminatorImpl::LatentDiscriminatorImpl(const ModelConfig& config)
    : input_dim_(config.latent_dim) {
  int in = config.latent_dim;
  for (int i = 0; i < 3; ++i) {
    hidden_.push_back(register_module("fc" + std::to_string(i),
                                      torch::nn::Linear(in, config.latent_disc_widths[i])));
    in = config.latent_disc_widths[i];
  }
  head = register_module("head", torch::nn::Linear(in, 1));
}

torch::Tensor LatentDiscriminatorImpl::forward(const torch::Tensor& z) {
  auto x = z;
  for (auto& fc : hidden_) x = leaky(fc->forward(x));
  return torch::sigmoid(head->forward(x)).squeeze(1);
}

// --- local discriminator ---------------------------------------------------------

LocalDiscriminatorImpl::LocalDiscriminatorImpl(const ModelConfig& config)
    : roi_size_(config.roi_size) {
  torch::nn::Sequential seq;
  const std::array<int, 4> strides = {2, 2, 2, 1};
  int in = 3;
  for (int i = 0; i < 4; ++i) {
    const int out = config.encoder_widths[i];
    seq->push_back("conv" + std::to_string(i), conv5(in, out, strides[i]));
    if (i > 0) seq->push_back("bn" + std::to_string(i), torch::nn::BatchNorm2d(out));
    seq->push_back("act" + std::to_string(i),
                   torch::nn::LeakyReLU(torch::nn::LeakyReLUOptions().negative_slope(kLeakySlope)));
    in = out;
  }
  trunk = register_module("trunk", seq);
  const int side = ceil_half(config.roi_size, 3);
  const int features = in * side * side;
  disc_head = register_module("disc_head", torch::nn::Linear(features + config.label_dim, 1));
  reg_head = register_module("reg_head", torch::nn::Linear(features, 2));
}

torch::Tensor LocalDiscriminatorImpl::features(const torch::Tensor& roi) {
  check_batch(roi, 3, roi_size_, roi_size_, "local discriminator");
  return trunk->forward(roi).flatten(1);
}

torch::Tensor LocalDiscriminatorImpl::discriminate(const torch::Tensor& features,
                                                   const torch::Tensor& label_embedding) {
  return torch::sigmoid(disc_head->forward(torch::cat({features, label_embedding}, 1))).squeeze(1);
}

torch::Tensor LocalDiscriminatorImpl::regress(const torch::Tensor& features) {
  return reg_head->forward(features);
}

// --- global discriminator --------------------------------------------------------

GlobalDiscriminatorImpl::GlobalDiscriminatorImpl(const ModelConfig& config)
    : image_size_(config.image_size) {
  int in = 3;
  for (int i = 0; i < 4; ++i) {
    convs_.push_back(register_module("conv" + std::to_string(i),
                                     conv5(in, config.global_disc_widths[i], 2)));
    in = config.global_disc_widths[i];
  }
  const int side = ceil_half(config.image_size, 4);
  head = register_module("head", torch::nn::Linear(in * side * side, 1));
}

torch::Tensor GlobalDiscriminatorImpl::forward(const torch::Tensor& image) {
  check_batch(image, 3, image_size_, image_size_, "global discriminator");
  auto x = image;
  for (auto& conv : convs_) x = leaky(conv->forward(x));
  return torch::sigmoid(head->forward(x.flatten(1))).squeeze(1);
}

// --- identity pyramid ------------------------------------------------------------

PyramidNetImpl::PyramidNetImpl(const std::array<int, 5>& widths) {
  int in = 3;
  for (int s = 0; s < 5; ++s) {
    const auto name = "conv" + std::to_string(s + 1) + "_";
    auto opts = [](int i, int o) { return torch::nn::Conv2dOptions(i, o, 3).padding(1); };
    auto first = register_module(name + "1", torch::nn::Conv2d(opts(in, widths[s])));
    auto second = register_module(name + "2", torch::nn::Conv2d(opts(widths[s], widths[s])));
    stages_.emplace_back(first, second);
    in = widths[s];
  }
}

std::vector<torch::Tensor> PyramidNetImpl::forward(const torch::Tensor& image) {
  std::vector<torch::Tensor> taps;
  auto x = image;
  for (std::size_t s = 0; s < stages_.size(); ++s) {
    if (s > 0) x = torch::max_pool2d(x, {2, 2}, {2, 2}, {0, 0}, {1, 1}, /*ceil_mode=*/true);
    x = torch::relu(stages_[s].first->forward(x));
    x = torch::relu(stages_[s].second->forward(x));
    taps.push_back(x);
  }
  return taps;
}

// --- bundles -------------------------------------------------------------------

CargBundle make_carg(Au au, const ModelConfig& config) {
  CargBundle c;
  c.au = au;
  c.encoder = Encoder(config);
  c.decoder = Decoder(config);
  c.latent_disc = LatentDiscriminator(config);
  c.local_disc = LocalDiscriminator(config);
  return c;
}

torch::Tensor encode(CargBundle& carg, const torch::Tensor& roi) {
  return carg.encoder->forward(roi);
}

torch::Tensor decode(CargBundle& carg, const torch::Tensor& z, const torch::Tensor& pairs) {
  check_label_pairs(pairs);
  check_vectors(z, carg.decoder->latent_dim(), "decode");
  require(z.size(0) == pairs.size(0), ErrorKind::Shape,
          "decode: latent and label batch sizes differ");
  return carg.decoder->forward(z, embed_pairs(pairs.to(z.scalar_type()), carg.decoder->label_dim()));
}

torch::Tensor decode(CargBundle& carg, const torch::Tensor& z, const AuTargetVector& label) {
  const std::array<AuState, 1> state{label.states[au_index(carg.au)]};
  auto batch_z = z.dim() == 1 ? z.unsqueeze(0) : z;
  return decode(carg, batch_z, label_pairs(state, z.scalar_type()));
}

torch::Tensor discriminate_latent(CargBundle& carg, const torch::Tensor& z) {
  check_vectors(z, carg.latent_disc->input_dim(), "discriminate_latent");
  return carg.latent_disc->forward(z);
}

torch::Tensor discriminate_local(CargBundle& carg, const torch::Tensor& roi,
                                 const torch::Tensor& pairs) {
  check_label_pairs(pairs);
  auto& disc = carg.local_disc;
  const auto features = disc->features(roi);
  const int label_dim = static_cast<int>(disc->disc_head->weight.size(1) - features.size(1));
  return disc->discriminate(features, embed_pairs(pairs.to(roi.scalar_type()), label_dim));
}

torch::Tensor regress_au(CargBundle& carg, const torch::Tensor& roi) {
  return carg.local_disc->regress(carg.local_disc->features(roi));
}

torch::Tensor discriminate_global(GlobalDiscriminator& dimg, const torch::Tensor& image) {
  return dimg->forward(image);
}

// --- identity extractor ----------------------------------------------------------

PyramidIdentityExtractor::PyramidIdentityExtractor(const std::array<int, 5>& widths)
    : net_(widths) {
  for (auto& p : net_->parameters()) p.set_requires_grad(false);
  net_->eval();
}

std::unique_ptr<PyramidIdentityExtractor> PyramidIdentityExtractor::seeded(
    const std::array<int, 5>& widths, std::uint64_t seed) {
  torch::manual_seed(seed);
  return std::unique_ptr<PyramidIdentityExtractor>(new PyramidIdentityExtractor(widths));
}

std::unique_ptr<PyramidIdentityExtractor> PyramidIdentityExtractor::from_file(
    const std::array<int, 5>& widths, const std::string& path) {
  if (!std::filesystem::exists(path)) {
    fail(ErrorKind::Config, "identity weights file '" + path + "' not found");
  }
  std::unique_ptr<PyramidIdentityExtractor> ex(new PyramidIdentityExtractor(widths));
  torch::serialize::InputArchive archive;
  try {
    archive.load_from(path);
  } catch (const c10::Error& e) {
    fail(ErrorKind::Config, "cannot read identity weights '" + path + "'");
  }
  std::vector<std::pair<std::string, torch::Tensor>> weights;
  for (const auto& [name, tensor] : ex->named_weights()) {
    torch::Tensor value;
    if (!archive.try_read(name, value)) {
      fail(ErrorKind::Config, "identity weights '" + path + "' lack tensor " + name);
    }
    weights.emplace_back(name, value);
  }
  ex->load_weights(weights);
  return ex;
}

FeaturePyramid PyramidIdentityExtractor::features(const torch::Tensor& images) {
  require(images.dim() == 4 && images.size(1) == 3, ErrorKind::Shape,
          "identity features: expected (B, 3, H, W)");
  return net_->forward(images);
}

std::vector<std::pair<std::string, torch::Tensor>> PyramidIdentityExtractor::named_weights() const {
  std::vector<std::pair<std::string, torch::Tensor>> out;
  for (const auto& item : net_->named_parameters(true)) out.emplace_back(item.key(), item.value());
  return out;
}

void PyramidIdentityExtractor::load_weights(
    const std::vector<std::pair<std::string, torch::Tensor>>& weights) {
  auto params = net_->named_parameters(true);
  torch::NoGradGuard guard;
  for (const auto& [name, value] : weights) {
    auto* target = params.find(name);
    if (target == nullptr) fail(ErrorKind::Config, "identity weights: unexpected tensor " + name);
    if (!target->sizes().equals(value.sizes())) {
      fail(ErrorKind::Config, "identity weights: shape mismatch for " + name);
    }
    target->copy_(value);
  }
}

void PyramidIdentityExtractor::save(const std::string& path) const {
  torch::serialize::OutputArchive archive;
  for (const auto& [name, tensor] : named_weights()) archive.write(name, tensor);
  archive.save_to(path);
}

FeaturePyramid identity_features(IdentityExtractor& extractor, const torch::Tensor& images) {
  return extractor.features(images);
}

// --- full model ------------------------------------------------------------------

LacGanModel::LacGanModel(const ModelConfig& config, std::uint64_t seed) : config_(config) {
  config_.validate();
  torch::manual_seed(seed);
  for (Au au : config_.aus) cargs_.push_back(make_carg(au, config_));
  global_disc_ = GlobalDiscriminator(config_);
}

CargBundle& LacGanModel::carg(Au au) {
  for (auto& c : cargs_) {
    if (c.au == au) return c;
  }
  fail(ErrorKind::Config, au_name(au) + " is not part of this model");
}

std::vector<torch::Tensor> LacGanModel::generator_parameters() {
  std::vector<torch::Tensor> out;
  for (auto& c : cargs_) {
    for (auto& p : c.encoder->parameters()) out.push_back(p);
    for (auto& p : c.decoder->parameters()) out.push_back(p);
  }
  return out;
}

std::vector<torch::Tensor> LacGanModel::discriminator_parameters() {
  std::vector<torch::Tensor> out;
  for (auto& c : cargs_) {
    for (auto& p : c.latent_disc->parameters()) out.push_back(p);
    for (auto& p : c.local_disc->parameters()) out.push_back(p);
  }
  for (auto& p : global_disc_->parameters()) out.push_back(p);
  return out;
}

std::vector<std::pair<std::string, torch::Tensor>> LacGanModel::named_state() {
  std::vector<std::pair<std::string, torch::Tensor>> out;
  auto add = [&out](const std::string& prefix, torch::nn::Module& module) {
    for (const auto& item : module.named_parameters(true)) {
      out.emplace_back(prefix + "." + item.key(), item.value());
    }
    for (const auto& item : module.named_buffers(true)) {
      out.emplace_back(prefix + "." + item.key(), item.value());
    }
  };
  for (auto& c : cargs_) {
    const auto name = au_name(c.au);
    add(name + ".encoder", *c.encoder);
    add(name + ".decoder", *c.decoder);
    add(name + ".latent_disc", *c.latent_disc);
    add(name + ".local_disc", *c.local_disc);
  }
  add("global_disc", *global_disc_);
  return out;
}

std::map<std::string, std::vector<std::string>> LacGanModel::manifest() {
  std::map<std::string, std::vector<std::string>> out;
  for (const auto& [name, tensor] : named_state()) {
    out[name.substr(0, name.find('.'))].push_back(name);
  }
  return out;
}

void LacGanModel::to(torch::Dtype dtype) {
  for (auto& c : cargs_) {
    c.encoder->to(dtype);
    c.decoder->to(dtype);
    c.latent_disc->to(dtype);
    c.local_disc->to(dtype);
  }
  global_disc_->to(dtype);
}

void LacGanModel::train(bool on) {
  for (auto& c : cargs_) {
    c.encoder->train(on);
    c.decoder->train(on);
    c.latent_disc->train(on);
    c.local_disc->train(on);
  }
  global_disc_->train(on);
}

}  // namespace lacgan
