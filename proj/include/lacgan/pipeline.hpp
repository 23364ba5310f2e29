#pragma once

// Batched form of the regional pipeline shared by training and synthesis:
// attention rasters and ROI windows per AU, the generator pass, and the
// attention-masked composite back into the full face.

#include <span>
#include <vector>

#include <torch/torch.h>

#include "lacgan/au_geometry.hpp"
#include "lacgan/dataset.hpp"
#include "lacgan/models.hpp"
#include "lacgan/tensors.hpp"

namespace lacgan {

/// One AU across a batch.
struct RegionBatch {
  Au au = Au::AU1;
  torch::Tensor attention;  // (B, 1, H, W), overlap-normalized
  torch::Tensor gate;       // (B, 1, H, W), 1 where attention > 0
  std::vector<RoiMapping> mappings;
  torch::Tensor true_pairs;    // (B, 2), unknown labels encoded as absent
  torch::Tensor known;         // (B), 1 where the label is known
  torch::Tensor target_pairs;  // (B, 2)
};

struct Batch {
  torch::Tensor images;  // (B, 3, H, W)
  std::vector<RegionBatch> regions;
};

/// Rasterizes the attention of every AU in `aus` for each sample. Target
/// pairs default to the true labels.
Batch make_batch(std::span<const Sample* const> samples, const AURuleTable& rules,
                 std::span<const Au> aus, int roi_size, torch::Dtype dtype = torch::kFloat32);

/// Attention-weighted region of every sample cropped to its ROI window.
torch::Tensor region_rois(const torch::Tensor& images, const RegionBatch& region);

/// sum_i [A_i > 0] * paste(G_i) + (1 - sum_i A_i) * X
torch::Tensor compose(const torch::Tensor& images, std::span<const RegionBatch> regions,
                      std::span<const torch::Tensor> generated);

struct GeneratorOutputs {
  std::vector<torch::Tensor> rois;   // weighted input windows
  std::vector<torch::Tensor> z;
  std::vector<torch::Tensor> recon;  // decoded with the true labels
  std::vector<torch::Tensor> fake;   // decoded with the target labels
  torch::Tensor composite;           // full faces assembled from `fake`
};

/// Encodes every region once and decodes it under both label sets.
GeneratorOutputs run_generators(LacGanModel& model, const Batch& batch);

}  // namespace lacgan
