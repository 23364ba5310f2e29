#pragma once

// Alternating discriminator/generator optimization, checkpoints and resume.

#include <cstdint>
#include <map>
#include <memory>
#include <ostream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "lacgan/dataset.hpp"
#include "lacgan/models.hpp"
#include "lacgan/objectives.hpp"
#include "lacgan/pipeline.hpp"

namespace lacgan {

struct TrainConfig {
  double learning_rate = 2e-4;
  double adam_beta1 = 0.5;
  double adam_beta2 = 0.9;
  int batch_size = 16;
  std::int64_t max_steps = 1000;
  int d_steps_per_g_step = 1;
  std::uint64_t seed = 0;
  LossWeights weights;
  ModelConfig model;
  std::string rules = "default";  // "default", "toy" or a rule file
  std::string identity_weights;   // empty: frozen seeded pyramid
  bool align = false;
  int presence_threshold = 1;
  std::int64_t checkpoint_every = 100;
  std::int64_t log_every = 10;
  double grad_clip = 0.0;  // global norm; 0 disables

  void validate() const;
  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
  static TrainConfig load(const std::string& path);
  AURuleTable resolve_rules() const;
};

/// Steps at which fit() writes checkpoints.
std::vector<std::int64_t> checkpoint_steps(std::int64_t every, std::int64_t max_steps);
std::string checkpoint_name(std::int64_t step);

/// Sets single-threaded, deterministic kernels when LACGAN_DETERMINISTIC is
/// set to anything other than "0".
void apply_determinism_from_env();

struct Objective {
  torch::Tensor loss;
  LossReport report;
};

/// Everything the generator phase minimizes. Throws a divergence error
/// naming the first non-finite term.
Objective generator_objective(LacGanModel& model, IdentityExtractor& identity, const Batch& batch,
                              const GeneratorOutputs& gen, const LossWeights& weights);

/// Cross-entropy of every discriminator plus the regression head fit on
/// real regions. `priors` holds one (B, latent) uniform sample per AU.
torch::Tensor discriminator_objective(LacGanModel& model, const Batch& batch,
                                      const GeneratorOutputs& gen,
                                      const std::vector<torch::Tensor>& priors,
                                      const LossWeights& weights);

/// Contents of a checkpoint file.
struct Checkpoint {
  std::int64_t step = 0;
  std::string config_hash;
  ModelConfig model;
  nlohmann::json train_config;
  std::string rules_ini;
  std::map<std::string, std::vector<std::string>> manifest;
  std::map<std::string, torch::Tensor> state;
  std::map<std::string, torch::Tensor> identity;
  std::string generator_optimizer;
  std::string discriminator_optimizer;

  /// Atomic: written to a temporary file, then renamed.
  void save(const std::string& path) const;
  /// Throws a load error for unreadable or incomplete files.
  static Checkpoint read(const std::string& path);
};

/// Copies checkpoint tensors into `model`, verifying names and shapes.
void load_model_state(LacGanModel& model, const Checkpoint& ckpt);

class Trainer {
 public:
  Trainer(TrainConfig config, std::vector<Sample> samples, AURuleTable rules);

  const TrainConfig& config() const noexcept { return config_; }
  const AURuleTable& rules() const noexcept { return rules_; }
  LacGanModel& model() noexcept { return *model_; }
  IdentityExtractor& identity() noexcept { return *identity_; }
  std::int64_t step() const noexcept { return step_; }

  /// Sample indices of the batch trained at `step` (epoch-wise permutations).
  std::vector<std::size_t> batch_indices(std::int64_t step) const;
  /// Batch of `step` with its target labels drawn.
  Batch batch_for(std::int64_t step) const;

  LossReport train_step();
  LossReport train_step(const Batch& batch);

  void save(const std::string& path) const;
  /// Restores parameters, optimizer moments and the step counter. Throws a
  /// load error when the checkpoint does not match the active configuration.
  void load(const std::string& path);

  /// Trains up to max_steps, logging to `<out>/train_log.jsonl` (and `log`)
  /// and checkpointing under `<out>/checkpoints`. Returns the last checkpoint.
  std::string fit(const std::string& out_dir, std::ostream* log = nullptr);

 private:
  std::vector<torch::Tensor> draw_priors(std::int64_t step, long batch, torch::Dtype dtype) const;

  TrainConfig config_;
  AURuleTable rules_;
  std::vector<Sample> samples_;
  std::unique_ptr<LacGanModel> model_;
  std::unique_ptr<PyramidIdentityExtractor> identity_;
  std::unique_ptr<torch::optim::Adam> gen_opt_;
  std::unique_ptr<torch::optim::Adam> disc_opt_;
  std::int64_t step_ = 0;
};

}  // namespace lacgan
