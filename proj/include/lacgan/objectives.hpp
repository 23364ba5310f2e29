#pragma once

// Loss terms of the regional generators and the face-level objective, and
// the per-step report that carries them.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "lacgan/au_geometry.hpp"
#include "lacgan/models.hpp"

namespace lacgan {

/// Probabilities are clamped to [eps, 1 - eps] before taking logs.
inline constexpr double kProbEpsilon = 1e-7;

struct LossWeights {
  double lambda1 = 0.01;    // latent adversarial
  double lambda2 = 0.1;     // local adversarial (+ label)
  double lambda3 = 1.0;     // identity
  double lambda4 = 0.001;   // total variation
  double lambda_au = 10.0;  // label regression inside the local term
  double lambda_img = 0.1;  // global image adversarial, generator/discriminator aggregates only
  std::vector<double> beta;   // per CARG; empty means all 1
  std::vector<double> alpha{1.0, 1.0, 1.0, 1.0, 1.0};  // per identity level

  void validate(std::size_t n_aus, std::size_t levels) const;
  double beta_at(std::size_t i) const { return beta.empty() ? 1.0 : beta.at(i); }
  nlohmann::json to_json() const;
  static LossWeights from_json(const nlohmann::json& j);
};

/// Mean absolute difference.
torch::Tensor pixel_loss(const torch::Tensor& recon, const torch::Tensor& target);
/// Mean absolute difference over the samples whose mask entry is 1; zero
/// when the mask selects nothing.
torch::Tensor pixel_loss(const torch::Tensor& recon, const torch::Tensor& target,
                         const torch::Tensor& sample_mask);

/// Non-saturating generator term -mean(log d(fake)).
torch::Tensor generator_adv_loss(const torch::Tensor& d_fake);
/// -mean(log d(real)) - mean(log(1 - d(fake))); the real part is averaged
/// over the masked samples when a mask is given.
torch::Tensor discriminator_adv_loss(const torch::Tensor& d_real, const torch::Tensor& d_fake,
                                     const std::optional<torch::Tensor>& real_mask = std::nullopt);

struct AdversarialTerms {
  torch::Tensor disc;  // -[log d(real) + log(1 - d(fake))]
  torch::Tensor gen;   // -log d(fake)
};

AdversarialTerms latent_adv_losses(const torch::Tensor& d_prior, const torch::Tensor& d_encoded);
AdversarialTerms global_adv_loss(const torch::Tensor& d_real, const torch::Tensor& d_fake);

/// Squared L2 distance of each regression row to its +-1 target pair,
/// averaged over the (masked) batch.
torch::Tensor label_loss(const torch::Tensor& regression, const torch::Tensor& target_pairs,
                         const std::optional<torch::Tensor>& sample_mask = std::nullopt);

struct LocalTerms {
  torch::Tensor disc;
  torch::Tensor gen;
  torch::Tensor label;
};

/// Throws a contract violation for target rows other than (+1,-1)/(-1,+1).
LocalTerms local_adv_and_label_loss(const torch::Tensor& d_real, const torch::Tensor& d_fake,
                                    const torch::Tensor& reg_on_fake,
                                    const torch::Tensor& target_pairs);

/// sum_l alpha_l * mean|p_t[l] - p_r[l]|
torch::Tensor identity_loss(const FeaturePyramid& p_t, const FeaturePyramid& p_r,
                            const std::vector<double>& alpha);

/// Anisotropic total variation over the last two dimensions: the sum of
/// absolute horizontal and vertical neighbor differences divided by the
/// number of neighbor pairs.
torch::Tensor tv_loss(const torch::Tensor& image);

/// pixel + lambda1 * adv_z + lambda2 * adv_au
template <typename T>
T carg_objective(const T& pixel, const T& adv_z, const T& adv_au, const LossWeights& w) {
  return pixel + adv_z * w.lambda1 + adv_au * w.lambda2;
}

struct CargTerms {
  Au au = Au::AU1;
  double pixel = 0.0;
  double adv_z = 0.0;   // generator side
  double adv_au = 0.0;  // generator side, including lambda_au * label
  double label = 0.0;
  double carg = 0.0;
  bool operator==(const CargTerms&) const = default;
};

struct LossReport {
  std::int64_t step = 0;
  std::vector<CargTerms> cargs;
  double id = 0.0;
  double tv = 0.0;
  double img_adv = 0.0;  // generator side
  double total = 0.0;
  double generator = 0.0;      // total + lambda_img * img_adv
  double discriminator = 0.0;  // everything the discriminator phase minimizes

  /// Throws a divergence error naming the first non-finite term.
  void check_finite() const;
  nlohmann::json to_json() const;
  /// One JSON object on a single line.
  std::string to_line() const;
  bool operator==(const LossReport&) const = default;
};

/// Fills carg and total from the components:
///   total = sum_i beta_i * carg_i + lambda3 * id + lambda4 * tv.
/// Leaves discriminator untouched and sets generator = total + lambda_img * img_adv.
LossReport total_objective(std::vector<CargTerms> cargs, double id, double tv, double img_adv,
                           const LossWeights& weights);

}  // namespace lacgan
