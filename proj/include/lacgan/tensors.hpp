#pragma once

// Bridges between the plain rasters of au_geometry and torch tensors, and
// the fixed linear maps that cut an AU window out of a face and put it back.

#include <vector>

#include <torch/torch.h>

#include "lacgan/au_geometry.hpp"

namespace lacgan {

/// (3, H, W) tensor of the given dtype.
torch::Tensor to_tensor(const Image& image, torch::Dtype dtype = torch::kFloat32);
/// Accepts (3, H, W) or (1, 3, H, W).
Image to_image(const torch::Tensor& tensor);
/// (H, W) tensor.
torch::Tensor to_tensor(const AttentionMap& attention, torch::Dtype dtype = torch::kFloat32);

/// Row/column maps between a full face and an roi x roi window:
///   window = rows_in * face * cols_in^T,  face' = rows_out * window * cols_out^T.
/// When the attention support fits in the window the maps are 0/1 selections
/// (an exact crop and its transpose); otherwise they linearly resample the
/// support box.
struct RoiMapping {
  int roi = 0;
  ImageSize image;
  Box window;                    // face pixels covered by the ROI
  bool exact = true;             // plain crop, no resampling
  std::vector<double> rows_in;   // roi x H
  std::vector<double> cols_in;   // roi x W
  std::vector<double> rows_out;  // H x roi
  std::vector<double> cols_out;  // W x roi
};

RoiMapping roi_mapping(const Box& support, ImageSize image, int roi);

/// Batched crop: faces (B, C, H, W) with per-sample mappings -> (B, C, roi, roi).
torch::Tensor crop_windows(const torch::Tensor& faces, const std::vector<RoiMapping>& mappings);
/// Batched paste: windows (B, C, roi, roi) -> (B, C, H, W), zero outside each window.
torch::Tensor paste_windows(const torch::Tensor& windows, const std::vector<RoiMapping>& mappings);

}  // namespace lacgan
