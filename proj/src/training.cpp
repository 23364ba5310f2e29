#include "lacgan/training.hpp"

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <random>
#include <set>
#include <sstream>

#include <torch/script.h>

#include "lacgan/errors.hpp"
#include "lacgan/seeding.hpp"

namespace fs = std::filesystem;

namespace lacgan {

// --- config --------------------------------------------------------------------

void TrainConfig::validate() const {
  require(learning_rate >= 0.0, ErrorKind::Config, "learning_rate must be non-negative");
  require(adam_beta1 >= 0.0 && adam_beta1 < 1.0 && adam_beta2 >= 0.0 && adam_beta2 < 1.0,
          ErrorKind::Config, "Adam moment coefficients must lie in [0, 1)");
  require(batch_size >= 1, ErrorKind::Config, "batch_size must be >= 1");
  require(max_steps >= 0, ErrorKind::Config, "max_steps must be >= 0");
  require(d_steps_per_g_step >= 1, ErrorKind::Config, "d_steps_per_g_step must be >= 1");
  require(checkpoint_every >= 1 && log_every >= 1, ErrorKind::Config,
          "checkpoint_every and log_every must be >= 1");
  require(grad_clip >= 0.0, ErrorKind::Config, "grad_clip must be non-negative");
  model.validate();
  weights.validate(model.aus.size(), 5);
}

nlohmann::json TrainConfig::to_json() const {
  nlohmann::json j;
  j["learning_rate"] = learning_rate;
  j["adam_betas"] = {adam_beta1, adam_beta2};
  j["batch_size"] = batch_size;
  j["max_steps"] = max_steps;
  j["d_steps_per_g_step"] = d_steps_per_g_step;
  j["seed"] = seed;
  j["weights"] = weights.to_json();
  j["model"] = model.to_json();
  j["rules"] = rules;
  j["identity_weights"] = identity_weights;
  j["align"] = align;
  j["presence_threshold"] = presence_threshold;
  j["checkpoint_every"] = checkpoint_every;
  j["log_every"] = log_every;
  j["grad_clip"] = grad_clip;
  return j;
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  static const std::set<std::string> known = {
      "learning_rate", "adam_betas",     "batch_size",       "max_steps",
      "d_steps_per_g_step", "seed",      "weights",          "model",
      "rules",         "identity_weights", "align",          "presence_threshold",
      "checkpoint_every", "log_every",   "grad_clip",        "image_size",
      "roi_size"};
  require(j.is_object(), ErrorKind::Config, "training config must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    require(known.count(key) > 0, ErrorKind::Config, "unknown training config key '" + key + "'");
  }
  TrainConfig c;
  try {
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    if (j.contains("adam_betas")) {
      const auto betas = j.at("adam_betas").get<std::vector<double>>();
      require(betas.size() == 2, ErrorKind::Config, "adam_betas needs two values");
      c.adam_beta1 = betas[0];
      c.adam_beta2 = betas[1];
    }
    c.batch_size = j.value("batch_size", c.batch_size);
    c.max_steps = j.value("max_steps", c.max_steps);
    c.d_steps_per_g_step = j.value("d_steps_per_g_step", c.d_steps_per_g_step);
    c.seed = j.value("seed", c.seed);
    if (j.contains("weights")) c.weights = LossWeights::from_json(j.at("weights"));
    nlohmann::json model = j.value("model", nlohmann::json::object());
    if (j.contains("image_size")) model["image_size"] = j.at("image_size");
    if (j.contains("roi_size")) model["roi_size"] = j.at("roi_size");
    c.model = ModelConfig::from_json(model);
    c.rules = j.value("rules", c.rules);
    c.identity_weights = j.value("identity_weights", c.identity_weights);
    c.align = j.value("align", c.align);
    c.presence_threshold = j.value("presence_threshold", c.presence_threshold);
    c.checkpoint_every = j.value("checkpoint_every", c.checkpoint_every);
    c.log_every = j.value("log_every", c.log_every);
    c.grad_clip = j.value("grad_clip", c.grad_clip);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::Config, std::string("training config: ") + e.what());
  }
  c.validate();
  return c;
}

TrainConfig TrainConfig::load(const std::string& path) {
  std::ifstream in(path);
  require(in.good(), ErrorKind::Config, "cannot open training config '" + path + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::Config, "training config '" + path + "': " + e.what());
  }
  auto c = from_json(j);
  // Relative file references are taken relative to the config file.
  const auto base = fs::path(path).parent_path();
  auto rebase = [&base](std::string& ref) {
    if (ref.empty() || ref == "default" || ref == "toy") return;
    if (fs::path(ref).is_relative() && !fs::exists(ref)) ref = (base / ref).string();
  };
  rebase(c.rules);
  rebase(c.identity_weights);
  return c;
}

AURuleTable TrainConfig::resolve_rules() const {
  if (rules == "default") return AURuleTable::face_default();
  if (rules == "toy") return AURuleTable::toy_default();
  return AURuleTable::load(rules);
}

std::vector<std::int64_t> checkpoint_steps(std::int64_t every, std::int64_t max_steps) {
  require(every >= 1, ErrorKind::Config, "checkpoint period must be >= 1");
  std::vector<std::int64_t> steps;
  for (std::int64_t s = every; s <= max_steps; s += every) steps.push_back(s);
  if (max_steps > 0 && (steps.empty() || steps.back() != max_steps)) steps.push_back(max_steps);
  return steps;
}

std::string checkpoint_name(std::int64_t step) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "step_%06lld.ckpt", static_cast<long long>(step));
  return buf;
}

void apply_determinism_from_env() {
  const char* v = std::getenv("LACGAN_DETERMINISTIC");
  if (v == nullptr || std::string(v) == "0") return;
  torch::set_num_threads(1);
  at::globalContext().setDeterministicAlgorithms(true, false);
}

// --- objectives over a batch -----------------------------------------------------------

Objective generator_objective(LacGanModel& model, IdentityExtractor& identity, const Batch& batch,
                              const GeneratorOutputs& gen, const LossWeights& weights) {
  const int label_dim = model.config().label_dim;
  auto loss = torch::zeros({}, batch.images.options());
  std::vector<CargTerms> terms;
  for (std::size_t i = 0; i < batch.regions.size(); ++i) {
    const auto& region = batch.regions[i];
    auto& carg = model.carg(region.au);
    auto pixel = pixel_loss(gen.recon[i], gen.rois[i], region.known);
    auto adv_z = generator_adv_loss(discriminate_latent(carg, gen.z[i]));
    auto features = carg.local_disc->features(gen.fake[i]);
    auto d_fake = carg.local_disc->discriminate(features, embed_pairs(region.target_pairs, label_dim));
    auto label = label_loss(carg.local_disc->regress(features), region.target_pairs);
    auto adv_au = generator_adv_loss(d_fake) + weights.lambda_au * label;
    loss = loss + weights.beta_at(i) * carg_objective(pixel, adv_z, adv_au, weights);

    CargTerms t;
    t.au = region.au;
    t.pixel = pixel.item<double>();
    t.adv_z = adv_z.item<double>();
    t.adv_au = adv_au.item<double>();
    t.label = label.item<double>();
    terms.push_back(t);
  }

  FeaturePyramid real_features;
  {
    torch::NoGradGuard no_grad;
    real_features = identity.features(batch.images);
  }
  auto id = identity_loss(identity.features(gen.composite), real_features,
                          weights.alpha);
  auto tv = tv_loss(gen.composite);
  auto img = generator_adv_loss(discriminate_global(model.global_disc(), gen.composite));
  loss = loss + weights.lambda3 * id + weights.lambda4 * tv + weights.lambda_img * img;

  auto report = total_objective(std::move(terms), id.item<double>(), tv.item<double>(),
                                img.item<double>(), weights);
  report.check_finite();
  return {loss, report};
}

torch::Tensor discriminator_objective(LacGanModel& model, const Batch& batch,
                                      const GeneratorOutputs& gen,
                                      const std::vector<torch::Tensor>& priors,
                                      const LossWeights& weights) {
  require(priors.size() == batch.regions.size(), ErrorKind::Contract,
          "one prior sample per AU is required");
  const int label_dim = model.config().label_dim;
  auto loss = torch::zeros({}, batch.images.options());
  for (std::size_t i = 0; i < batch.regions.size(); ++i) {
    const auto& region = batch.regions[i];
    auto& carg = model.carg(region.au);
    auto latent = discriminator_adv_loss(discriminate_latent(carg, priors[i]),
                                         discriminate_latent(carg, gen.z[i].detach()));
    auto& local = carg.local_disc;
    auto real_features = local->features(gen.rois[i]);
    auto d_real = local->discriminate(real_features, embed_pairs(region.true_pairs, label_dim));
    auto d_fake = local->discriminate(local->features(gen.fake[i].detach()),
                                      embed_pairs(region.target_pairs, label_dim));
    auto au_adv = discriminator_adv_loss(d_real, d_fake, region.known);
    auto label = label_loss(local->regress(real_features), region.true_pairs, region.known);
    loss = loss + latent + au_adv + weights.lambda_au * label;
  }
  auto& dimg = model.global_disc();
  auto img = discriminator_adv_loss(discriminate_global(dimg, batch.images),
                                    discriminate_global(dimg, gen.composite.detach()));
  return loss + weights.lambda_img * img;
}

// --- checkpoint ------------------------------------------------------------------

namespace {

c10::Dict<std::string, at::Tensor> tensor_dict(const std::map<std::string, torch::Tensor>& m) {
  c10::Dict<std::string, at::Tensor> d;
  for (const auto& [k, v] : m) d.insert(k, v.detach().cpu().contiguous().clone());
  return d;
}

std::map<std::string, torch::Tensor> tensor_map(const c10::IValue& v) {
  std::map<std::string, torch::Tensor> m;
  for (const auto& entry : v.toGenericDict()) {
    m.emplace(entry.key().toStringRef(), entry.value().toTensor());
  }
  return m;
}

std::string optimizer_blob(torch::optim::Optimizer& opt) {
  torch::serialize::OutputArchive archive;
  opt.save(archive);
  std::ostringstream os;
  archive.save_to(os);
  return os.str();
}

void restore_optimizer(torch::optim::Optimizer& opt, const std::string& blob) {
  std::istringstream is(blob);
  torch::serialize::InputArchive archive;
  archive.load_from(is);
  opt.load(archive);
}

std::string shape_text(const torch::Tensor& t) {
  std::string s = "(";
  for (int64_t d = 0; d < t.dim(); ++d) s += (d ? ", " : "") + std::to_string(t.size(d));
  return s + ")";
}

}  // namespace

void Checkpoint::save(const std::string& path) const {
  c10::impl::GenericDict root(c10::StringType::get(), c10::AnyType::get());
  root.insert("format", std::string("lacgan-checkpoint-1"));
  root.insert("step", step);
  root.insert("config_hash", config_hash);
  root.insert("model_config", model.to_json().dump());
  root.insert("train_config", train_config.dump());
  root.insert("rules", rules_ini);
  root.insert("manifest", nlohmann::json(manifest).dump());
  root.insert("state", tensor_dict(state));
  root.insert("identity", tensor_dict(identity));
  root.insert("generator_optimizer", generator_optimizer);
  root.insert("discriminator_optimizer", discriminator_optimizer);
  const auto bytes = torch::pickle_save(c10::IValue(root));

  const auto tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    require(out.good(), ErrorKind::Io, "cannot write checkpoint '" + tmp + "'");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    require(out.good(), ErrorKind::Io, "short write to '" + tmp + "'");
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  require(!ec, ErrorKind::Io, "cannot move checkpoint into place: " + ec.message());
}

Checkpoint Checkpoint::read(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), ErrorKind::Load, "cannot open checkpoint '" + path + "'");
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  Checkpoint c;
  try {
    const auto root = torch::pickle_load(bytes).toGenericDict();
    require(root.contains("format") && root.at("format").toStringRef() == "lacgan-checkpoint-1",
            ErrorKind::Load, "'" + path + "' is not a checkpoint");
    c.step = root.at("step").toInt();
    c.config_hash = root.at("config_hash").toStringRef();
    c.model = ModelConfig::from_json(nlohmann::json::parse(root.at("model_config").toStringRef()));
    c.train_config = nlohmann::json::parse(root.at("train_config").toStringRef());
    c.rules_ini = root.at("rules").toStringRef();
    c.manifest = nlohmann::json::parse(root.at("manifest").toStringRef())
                     .get<std::map<std::string, std::vector<std::string>>>();
    c.state = tensor_map(root.at("state"));
    c.identity = tensor_map(root.at("identity"));
    c.generator_optimizer = root.at("generator_optimizer").toStringRef();
    c.discriminator_optimizer = root.at("discriminator_optimizer").toStringRef();
  } catch (const Error&) {
    throw;
  } catch (const std::exception& e) {
    fail(ErrorKind::Load, "corrupt checkpoint '" + path + "': " + e.what());
  }
  std::size_t listed = 0;
  for (const auto& [owner, names] : c.manifest) {
    for (const auto& name : names) {
      require(c.state.count(name) > 0, ErrorKind::Load,
              "checkpoint manifest lists missing tensor " + name);
      ++listed;
    }
  }
  require(listed == c.state.size(), ErrorKind::Load, "checkpoint holds tensors outside its manifest");
  return c;
}

void load_model_state(LacGanModel& model, const Checkpoint& ckpt) {
  auto named = model.named_state();
  require(named.size() == ckpt.state.size(), ErrorKind::Load,
          "checkpoint has " + std::to_string(ckpt.state.size()) + " tensors, model expects " +
              std::to_string(named.size()));
  for (const auto& [name, target] : named) {
    auto it = ckpt.state.find(name);
    require(it != ckpt.state.end(), ErrorKind::Load, "checkpoint lacks tensor " + name);
    require(it->second.sizes().equals(target.sizes()), ErrorKind::Load,
            "shape mismatch for " + name + ": checkpoint " + shape_text(it->second) +
                ", model " + shape_text(target));
  }
  if (ckpt.config_hash != model.config().hash()) {
    const auto have = ckpt.model.to_json(), want = model.config().to_json();
    std::string diff;
    for (const auto& [key, value] : want.items()) {
      if (!have.contains(key) || have.at(key) != value) {
        diff += (diff.empty() ? "" : ", ") + key + " checkpoint " +
                (have.contains(key) ? have.at(key).dump() : "missing") + ", model " + value.dump();
      }
    }
    fail(ErrorKind::Load, "configuration mismatch: " + (diff.empty() ? "hash differs" : diff));
  }
  torch::NoGradGuard no_grad;
  for (auto& [name, target] : named) target.copy_(ckpt.state.at(name));
}

// --- trainer ---------------------------------------------------------------------

Trainer::Trainer(TrainConfig config, std::vector<Sample> samples, AURuleTable rules)
    : config_(std::move(config)), rules_(std::move(rules)), samples_(std::move(samples)) {
  config_.validate();
  rules_.validate();
  require(!samples_.empty(), ErrorKind::Data, "training set is empty");
  const int size = config_.model.image_size;
  for (const auto& s : samples_) {
    require(s.image.height() == size && s.image.width() == size, ErrorKind::Data,
            "sample " + s.name + " is not " + std::to_string(size) + "x" + std::to_string(size));
  }
  model_ = std::make_unique<LacGanModel>(config_.model, derive_seed(config_.seed, {0x30}));
  identity_ = config_.identity_weights.empty()
                  ? PyramidIdentityExtractor::seeded(config_.model.identity_widths,
                                                     derive_seed(config_.seed, {0x1d}))
                  : PyramidIdentityExtractor::from_file(config_.model.identity_widths,
                                                        config_.identity_weights);
  auto options = [this] {
    return torch::optim::AdamOptions(config_.learning_rate)
        .betas({config_.adam_beta1, config_.adam_beta2});
  };
  gen_opt_ = std::make_unique<torch::optim::Adam>(model_->generator_parameters(), options());
  disc_opt_ = std::make_unique<torch::optim::Adam>(model_->discriminator_parameters(), options());
}

std::vector<std::size_t> Trainer::batch_indices(std::int64_t step) const {
  const auto n = static_cast<std::uint64_t>(samples_.size());
  const auto b = static_cast<std::uint64_t>(config_.batch_size);
  std::vector<std::size_t> out;
  std::vector<std::size_t> perm;
  std::uint64_t perm_epoch = ~0ULL;
  for (std::uint64_t j = 0; j < b; ++j) {
    const std::uint64_t global = static_cast<std::uint64_t>(step) * b + j;
    const std::uint64_t epoch = global / n;
    if (epoch != perm_epoch) {
      perm.resize(n);
      for (std::size_t i = 0; i < n; ++i) perm[i] = i;
      std::mt19937_64 rng(derive_seed(config_.seed, {0xe0, epoch}));
      for (std::size_t i = n - 1; i > 0; --i) std::swap(perm[i], perm[rng() % (i + 1)]);
      perm_epoch = epoch;
    }
    out.push_back(perm[global % n]);
  }
  return out;
}

Batch Trainer::batch_for(std::int64_t step) const {
  std::vector<const Sample*> picked;
  for (auto i : batch_indices(step)) picked.push_back(&samples_[i]);
  auto batch = make_batch(picked, rules_, config_.model.aus, config_.model.roi_size);
  std::mt19937_64 rng(derive_seed(config_.seed, {0x7a, static_cast<std::uint64_t>(step)}));
  for (auto& region : batch.regions) {
    const auto n = region.target_pairs.size(0);
    auto targets = torch::empty({n, 2}, torch::kFloat32);
    for (long b = 0; b < n; ++b) {
      const auto p = AuTargetVector::pair(unit_uniform(rng) < 0.5 ? AuState::Present
                                                                  : AuState::Absent);
      targets[b][0] = p[0];
      targets[b][1] = p[1];
    }
    region.target_pairs = targets;
  }
  return batch;
}

std::vector<torch::Tensor> Trainer::draw_priors(std::int64_t step, long batch,
                                                torch::Dtype dtype) const {
  std::vector<torch::Tensor> priors;
  const int dim = config_.model.latent_dim;
  for (std::size_t i = 0; i < config_.model.aus.size(); ++i) {
    std::mt19937_64 rng(derive_seed(config_.seed, {0x9a, static_cast<std::uint64_t>(step), i}));
    std::vector<double> values(static_cast<std::size_t>(batch) * dim);
    for (auto& v : values) v = uniform(rng, -1.0, 1.0);
    priors.push_back(torch::tensor(values, torch::kFloat64).view({batch, dim}).to(dtype));
  }
  return priors;
}

LossReport Trainer::train_step() { return train_step(batch_for(step_)); }

LossReport Trainer::train_step(const Batch& batch) {
  auto& model = *model_;
  model.train(true);
  auto gen = run_generators(model, batch);
  const auto priors = draw_priors(step_, batch.images.size(0), batch.images.scalar_type());

  double d_value = 0.0;
  for (int k = 0; k < config_.d_steps_per_g_step; ++k) {
    disc_opt_->zero_grad();
    auto d_loss = discriminator_objective(model, batch, gen, priors, config_.weights);
    d_value = d_loss.item<double>();
    if (!std::isfinite(d_value)) fail(ErrorKind::Divergence, "non-finite loss term discriminator");
    d_loss.backward();
    if (config_.grad_clip > 0.0) {
      torch::nn::utils::clip_grad_norm_(model.discriminator_parameters(), config_.grad_clip);
    }
    disc_opt_->step();
  }

  gen_opt_->zero_grad();
  auto objective = generator_objective(model, *identity_, batch, gen, config_.weights);
  objective.loss.backward();
  if (config_.grad_clip > 0.0) {
    torch::nn::utils::clip_grad_norm_(model.generator_parameters(), config_.grad_clip);
  }
  gen_opt_->step();

  ++step_;
  objective.report.step = step_;
  objective.report.discriminator = d_value;
  return objective.report;
}

void Trainer::save(const std::string& path) const {
  Checkpoint c;
  c.step = step_;
  c.config_hash = model_->config().hash();
  c.model = model_->config();
  c.train_config = config_.to_json();
  c.rules_ini = rules_.to_ini();
  c.manifest = model_->manifest();
  for (const auto& [name, tensor] : model_->named_state()) c.state.emplace(name, tensor);
  for (const auto& [name, tensor] : identity_->named_weights()) c.identity.emplace(name, tensor);
  c.generator_optimizer = optimizer_blob(*gen_opt_);
  c.discriminator_optimizer = optimizer_blob(*disc_opt_);
  c.save(path);
}

void Trainer::load(const std::string& path) {
  const auto c = Checkpoint::read(path);
  load_model_state(*model_, c);
  std::vector<std::pair<std::string, torch::Tensor>> weights(c.identity.begin(), c.identity.end());
  try {
    identity_->load_weights(weights);
    restore_optimizer(*gen_opt_, c.generator_optimizer);
    restore_optimizer(*disc_opt_, c.discriminator_optimizer);
  } catch (const Error& e) {
    fail(ErrorKind::Load, std::string("checkpoint '") + path + "': " + e.what());
  } catch (const c10::Error& e) {
    fail(ErrorKind::Load, std::string("checkpoint '") + path + "': optimizer state mismatch");
  }
  step_ = c.step;
}

std::string Trainer::fit(const std::string& out_dir, std::ostream* log) {
  const fs::path root(out_dir);
  fs::create_directories(root / "checkpoints");
  std::ofstream log_file(root / "train_log.jsonl", std::ios::app);
  require(log_file.good(), ErrorKind::Io, "cannot open training log in '" + out_dir + "'");

  const auto schedule = checkpoint_steps(config_.checkpoint_every, config_.max_steps);
  const std::set<std::int64_t> checkpoints(schedule.begin(), schedule.end());
  std::string last;
  while (step_ < config_.max_steps) {
    const auto report = train_step();
    if (step_ % config_.log_every == 0 || step_ == config_.max_steps) {
      const auto line = report.to_line();
      log_file << line << '\n' << std::flush;
      if (log != nullptr) *log << line << '\n' << std::flush;
    }
    if (checkpoints.count(step_) > 0) {
      last = (root / "checkpoints" / checkpoint_name(step_)).string();
      save(last);
    }
  }
  if (last.empty()) {
    last = (root / "checkpoints" / checkpoint_name(step_)).string();
    save(last);
  }
  return last;
}

}  // namespace lacgan
