#pragma once

// Shared test scaffolding: tiny model configurations, random samples,
// temporary directories and a central-difference gradient checker.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "lacgan/dataset.hpp"
#include "lacgan/models.hpp"
#include "lacgan/seeding.hpp"

namespace lacgan::testing {

/// 8x8 faces, 4x4 ROIs, two AUs, narrow layers.
inline ModelConfig tiny_config() {
  ModelConfig c;
  c.image_size = 8;
  c.roi_size = 4;
  c.latent_dim = 6;
  c.label_dim = 4;
  c.encoder_widths = {2, 3, 4, 4, 4};
  c.latent_disc_widths = {5, 4, 3};
  c.global_disc_widths = {2, 3, 3, 4};
  c.identity_widths = {2, 2, 3, 3, 3};
  c.aus = {Au::AU1, Au::AU12};
  return c;
}

/// Small patches that fit the 4x4 ROI of tiny_config() on 8x8 canonical faces.
inline AURuleTable tiny_rules() {
  AURuleTable t = AURuleTable::toy_default();
  t.patch_half_size = 1;
  t.decay_rate = 0.3;
  t.reference_size = 8.0;
  for (auto& [au, centers] : t.rules) centers = {{30, 0, 0}};
  t.rules[Au::AU1] = {{19, 0, 0}};
  t.rules[Au::AU12] = {{54, 0, 0}};
  return t;
}

inline Image random_image(int size, std::mt19937_64& rng) {
  Image img(size, size);
  for (auto& v : img.pixels()) v = static_cast<float>(uniform(rng, -0.9, 0.9));
  return img;
}

/// Random images on canonical landmarks with random present/absent labels.
inline std::vector<Sample> random_samples(int n, int size, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<Sample> out;
  for (int i = 0; i < n; ++i) {
    Sample s;
    s.name = "s" + std::to_string(i);
    s.subject_id = "S" + std::to_string(i % 3);
    s.image = random_image(size, rng);
    s.landmarks = canonical_landmarks(size);
    for (auto& l : s.labels) l = (rng() >> 63) ? AuLabel::Present : AuLabel::Absent;
    out.push_back(std::move(s));
  }
  return out;
}

inline std::vector<const Sample*> pointers(const std::vector<Sample>& samples) {
  std::vector<const Sample*> p;
  for (const auto& s : samples) p.push_back(&s);
  return p;
}

class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() /
            ("lacgan_" + tag + "_" + std::to_string(rd()) + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::string str(const std::string& child = "") const { return (path_ / child).string(); }

 private:
  std::filesystem::path path_;
};

inline constexpr double kGradFloor = 1e-6;

struct GradCheck {
  double max_rel_error = 0.0;
  std::string worst;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  int checked = 0;
};

/// Compares autograd against central differences (step h) for `per_tensor`
/// entries of every tensor: the largest-gradient entry plus random ones.
/// Relative error |a - n| / max(|a|, |n|, kGradFloor * max(1, |f|)). The
/// differences carry round-off of about eps * |f| / h (2e-11 for f of order
/// one at h = 1e-5), so gradients below the floor are judged on absolute
/// error instead; the floor grows with |f| to keep the same margin.
inline GradCheck check_gradients(const std::function<torch::Tensor()>& f,
                                 const std::vector<std::pair<std::string, torch::Tensor>>& tensors,
                                 int per_tensor = 3, double h = 1e-5, std::uint64_t seed = 1) {
  for (const auto& [name, t] : tensors) {
    if (t.grad().defined()) t.mutable_grad().zero_();
  }
  auto f0 = f();
  f0.backward();
  const double floor = kGradFloor * std::max(1.0, std::abs(f0.item<double>()));
  std::vector<torch::Tensor> analytic;
  for (const auto& [name, t] : tensors) {
    analytic.push_back(t.grad().defined() ? t.grad().clone() : torch::zeros_like(t));
  }

  GradCheck result;
  std::mt19937_64 rng(seed);
  torch::NoGradGuard no_grad;
  for (std::size_t k = 0; k < tensors.size(); ++k) {
    auto flat = tensors[k].second.view({-1});
    auto grad = analytic[k].view({-1});
    std::vector<long> picks{grad.abs().argmax().item<long>()};
    for (int r = 1; r < per_tensor; ++r) picks.push_back(static_cast<long>(rng() % flat.numel()));
    for (long i : picks) {
      const double orig = flat[i].item<double>();
      flat[i] = orig + h;
      const double up = f().item<double>();
      flat[i] = orig - h;
      const double down = f().item<double>();
      flat[i] = orig;
      const double numeric = (up - down) / (2.0 * h);
      const double a = grad[i].item<double>();
      const double scale = std::max({std::abs(a), std::abs(numeric), floor});
      const double err = std::abs(a - numeric) / scale;
      ++result.checked;
      if (err > result.max_rel_error) {
        result.max_rel_error = err;
        result.worst = tensors[k].first + "[" + std::to_string(i) + "]";
        result.worst_analytic = a;
        result.worst_numeric = numeric;
      }
    }
  }
  return result;
}

inline std::vector<std::pair<std::string, torch::Tensor>> named(torch::nn::Module& m,
                                                                const std::string& prefix) {
  std::vector<std::pair<std::string, torch::Tensor>> out;
  for (const auto& item : m.named_parameters(true)) {
    out.emplace_back(prefix + item.key(), item.value());
  }
  return out;
}

}  // namespace lacgan::testing
