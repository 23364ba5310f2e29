#pragma once

// Parametric networks: per-AU conditional regional generators (encoder and
// decoder), the latent discriminator, the local AU discriminator with its
// shared-trunk regression head, the global image discriminator and the
// identity feature pyramid.

#include <array>
#include <cstdint>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "lacgan/au_geometry.hpp"

namespace lacgan {

enum class AuState : std::int8_t { Absent, Present };

/// Desired on/off state per AU. One AU's state is a +-1 pair, one-hot over
/// (absent, present): absent = (+1, -1), present = (-1, +1).
struct AuTargetVector {
  std::array<AuState, kNumAus> states{};

  static std::array<float, 2> pair(AuState state) noexcept;
  std::array<float, 2> pair(Au au) const noexcept { return pair(states[au_index(au)]); }
  /// The pair tiled to `dim` entries (dim must be even).
  torch::Tensor embed(Au au, int dim = 60) const;
};

/// (B, 2) pairs for a batch of states.
torch::Tensor label_pairs(std::span<const AuState> states, torch::Dtype dtype = torch::kFloat32);
/// Tiles (B, 2) pairs to (B, dim).
torch::Tensor embed_pairs(const torch::Tensor& pairs, int dim);
/// Throws a contract violation unless every row is (+1, -1) or (-1, +1).
void check_label_pairs(const torch::Tensor& pairs);

struct ModelConfig {
  int image_size = 200;
  int roi_size = 64;
  int latent_dim = 60;
  int label_dim = 60;
  std::array<int, 5> encoder_widths{64, 128, 256, 512, 512};
  std::array<int, 3> latent_disc_widths{256, 128, 64};
  std::array<int, 4> global_disc_widths{64, 128, 256, 512};
  std::array<int, 5> identity_widths{64, 128, 256, 512, 512};
  std::vector<Au> aus{kAllAus.begin(), kAllAus.end()};

  void validate() const;
  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);
  /// FNV-1a over the canonical JSON; identifies parameter shapes.
  std::string hash() const;
};

// --- modules -------------------------------------------------------------------

/// Five 5x5 stride-2 convolutions, then a linear projection squashed by tanh.
class EncoderImpl : public torch::nn::Module {
 public:
  explicit EncoderImpl(const ModelConfig& config);
  torch::Tensor forward(const torch::Tensor& roi);

  torch::nn::Linear projection{nullptr};

 private:
  std::vector<torch::nn::Conv2d> convs_;
  int roi_size_;
};
TORCH_MODULE(Encoder);

/// Linear expansion of [z, label] then five 5x5 transposed convolutions, tanh output.
class DecoderImpl : public torch::nn::Module {
 public:
  explicit DecoderImpl(const ModelConfig& config);
  torch::Tensor forward(const torch::Tensor& z, const torch::Tensor& label_embedding);
  int latent_dim() const noexcept { return latent_dim_; }
  int label_dim() const noexcept { return label_dim_; }

 private:
  torch::nn::Linear expand_{nullptr};
  int latent_dim_;
  int label_dim_;
  std::vector<torch::nn::ConvTranspose2d> deconvs_;
  int base_channels_;
  int base_size_;
};
TORCH_MODULE(Decoder);

/// Four fully connected layers ending in a sigmoid probability.
class LatentDiscriminatorImpl : public torch::nn::Module {
 public:
  explicit LatentDiscriminatorImpl(const ModelConfig& config);
  torch::Tensor forward(const torch::Tensor& z);
  int input_dim() const noexcept { return input_dim_; }

  torch::nn::Linear head{nullptr};

 private:
  std::vector<torch::nn::Linear> hidden_;
  int input_dim_;
};
TORCH_MODULE(LatentDiscriminator);

/// Four 5x5 convolutions (batch-normalized after the first) shared by a
/// label-conditioned real/fake head and a 2-d AU regression head.
class LocalDiscriminatorImpl : public torch::nn::Module {
 public:
  explicit LocalDiscriminatorImpl(const ModelConfig& config);

  torch::Tensor features(const torch::Tensor& roi);
  torch::Tensor discriminate(const torch::Tensor& features, const torch::Tensor& label_embedding);
  torch::Tensor regress(const torch::Tensor& features);

  torch::nn::Sequential trunk{nullptr};
  torch::nn::Linear disc_head{nullptr};
  torch::nn::Linear reg_head{nullptr};

 private:
  int roi_size_;
};
TORCH_MODULE(LocalDiscriminator);

/// Four 5x5 stride-2 convolutions over the full face, sigmoid probability.
class GlobalDiscriminatorImpl : public torch::nn::Module {
 public:
  explicit GlobalDiscriminatorImpl(const ModelConfig& config);
  torch::Tensor forward(const torch::Tensor& image);

  torch::nn::Linear head{nullptr};

 private:
  std::vector<torch::nn::Conv2d> convs_;
  int image_size_;
};
TORCH_MODULE(GlobalDiscriminator);

/// VGG-style backbone: five stages of two 3x3 convolutions, max-pooled
/// between stages. Taps follow the second convolution of every stage.
class PyramidNetImpl : public torch::nn::Module {
 public:
  explicit PyramidNetImpl(const std::array<int, 5>& widths);
  std::vector<torch::Tensor> forward(const torch::Tensor& image);

 private:
  std::vector<std::pair<torch::nn::Conv2d, torch::nn::Conv2d>> stages_;
};
TORCH_MODULE(PyramidNet);

// --- bundles and operations -----------------------------------------------------------

/// Everything trained for one AU.
struct CargBundle {
  Au au = Au::AU1;
  Encoder encoder{nullptr};
  Decoder decoder{nullptr};
  LatentDiscriminator latent_disc{nullptr};
  LocalDiscriminator local_disc{nullptr};
};

CargBundle make_carg(Au au, const ModelConfig& config);

/// (B, 3, r, r) -> (B, latent_dim) in (-1, 1).
torch::Tensor encode(CargBundle& carg, const torch::Tensor& roi);
/// z (B, latent_dim), pairs (B, 2) -> (B, 3, r, r) in [-1, 1].
torch::Tensor decode(CargBundle& carg, const torch::Tensor& z, const torch::Tensor& pairs);
/// Single-sample convenience taking the target vector of the bundle's AU.
torch::Tensor decode(CargBundle& carg, const torch::Tensor& z, const AuTargetVector& label);
/// (B, latent_dim) -> (B) probabilities.
torch::Tensor discriminate_latent(CargBundle& carg, const torch::Tensor& z);
/// (B, 3, r, r), pairs (B, 2) -> (B) probabilities.
torch::Tensor discriminate_local(CargBundle& carg, const torch::Tensor& roi,
                                 const torch::Tensor& pairs);
/// (B, 3, r, r) -> (B, 2)
torch::Tensor regress_au(CargBundle& carg, const torch::Tensor& roi);
/// (B, 3, H, W) -> (B) probabilities.
torch::Tensor discriminate_global(GlobalDiscriminator& dimg, const torch::Tensor& image);

using FeaturePyramid = std::vector<torch::Tensor>;

/// Feature extractor behind the identity loss.
class IdentityExtractor {
 public:
  virtual ~IdentityExtractor() = default;
  virtual FeaturePyramid features(const torch::Tensor& images) = 0;
  virtual std::size_t levels() const = 0;
  virtual void to(torch::Dtype dtype) = 0;
  virtual std::vector<std::pair<std::string, torch::Tensor>> named_weights() const = 0;
};

/// Frozen pyramid backbone. Weights come from a file (pretrained) or from a
/// seeded random initialization.
class PyramidIdentityExtractor final : public IdentityExtractor {
 public:
  static std::unique_ptr<PyramidIdentityExtractor> seeded(const std::array<int, 5>& widths,
                                                          std::uint64_t seed);
  /// Throws a configuration error when the file is missing or does not match `widths`.
  static std::unique_ptr<PyramidIdentityExtractor> from_file(const std::array<int, 5>& widths,
                                                             const std::string& path);

  FeaturePyramid features(const torch::Tensor& images) override;
  std::size_t levels() const override { return 5; }
  void to(torch::Dtype dtype) override { net_->to(dtype); }
  std::vector<std::pair<std::string, torch::Tensor>> named_weights() const override;
  void load_weights(const std::vector<std::pair<std::string, torch::Tensor>>& weights);
  void save(const std::string& path) const;

 private:
  explicit PyramidIdentityExtractor(const std::array<int, 5>& widths);
  PyramidNet net_;
};

FeaturePyramid identity_features(IdentityExtractor& extractor, const torch::Tensor& images);

/// All trainable parts of the framework.
class LacGanModel {
 public:
  /// Initializes every module from `seed` in a fixed order.
  LacGanModel(const ModelConfig& config, std::uint64_t seed);

  const ModelConfig& config() const noexcept { return config_; }
  std::vector<CargBundle>& cargs() noexcept { return cargs_; }
  CargBundle& carg(Au au);
  GlobalDiscriminator& global_disc() noexcept { return global_disc_; }

  /// Encoders and decoders.
  std::vector<torch::Tensor> generator_parameters();
  /// Latent discriminators, local discriminators (trunk and both heads) and
  /// the global discriminator.
  std::vector<torch::Tensor> discriminator_parameters();

  /// Parameters and buffers under checkpoint names ("AU12.encoder...", "global_disc...").
  std::vector<std::pair<std::string, torch::Tensor>> named_state();
  /// Checkpoint names grouped by owner: AU name or "global_disc".
  std::map<std::string, std::vector<std::string>> manifest();

  void to(torch::Dtype dtype);
  void train(bool on = true);

 private:
  ModelConfig config_;
  std::vector<CargBundle> cargs_;
  GlobalDiscriminator global_disc_{nullptr};
};

}  // namespace lacgan
