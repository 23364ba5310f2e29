#include "lacgan/tensors.hpp"

#include <algorithm>
#include <cmath>

#include "lacgan/errors.hpp"

namespace lacgan {

torch::Tensor to_tensor(const Image& image, torch::Dtype dtype) {
  auto hwc = torch::from_blob(const_cast<float*>(image.pixels().data()),
                              {image.height(), image.width(), Image::kChannels}, torch::kFloat32);
  return hwc.permute({2, 0, 1}).contiguous().to(dtype);
}

Image to_image(const torch::Tensor& tensor) {
  auto t = tensor.detach();
  if (t.dim() == 4) {
    require(t.size(0) == 1, ErrorKind::Shape, "to_image: expected a single image");
    t = t.squeeze(0);
  }
  require(t.dim() == 3 && t.size(0) == Image::kChannels, ErrorKind::Shape,
          "to_image: expected a (3, H, W) tensor");
  auto hwc = t.to(torch::kCPU, torch::kFloat32).permute({1, 2, 0}).contiguous();
  const int h = static_cast<int>(hwc.size(0));
  const int w = static_cast<int>(hwc.size(1));
  const float* data = hwc.data_ptr<float>();
  return Image(h, w, std::vector<float>(data, data + hwc.numel()));
}

torch::Tensor to_tensor(const AttentionMap& attention, torch::Dtype dtype) {
  return torch::from_blob(const_cast<float*>(attention.weights().data()),
                          {attention.height(), attention.width()}, torch::kFloat32)
      .clone()
      .to(dtype);
}

namespace {

// Selection of `roi` consecutive pixels starting at `start`.
void crop_axis(int start, int roi, int extent, std::vector<double>& in, std::vector<double>& out) {
  in.assign(static_cast<std::size_t>(roi) * extent, 0.0);
  out.assign(static_cast<std::size_t>(extent) * roi, 0.0);
  for (int j = 0; j < roi; ++j) {
    in[static_cast<std::size_t>(j) * extent + start + j] = 1.0;
    out[static_cast<std::size_t>(start + j) * roi + j] = 1.0;
  }
}

// Linear resampling of [lo, hi] onto `roi` samples and back.
void resample_axis(int lo, int hi, int roi, int extent, std::vector<double>& in,
                   std::vector<double>& out) {
  in.assign(static_cast<std::size_t>(roi) * extent, 0.0);
  out.assign(static_cast<std::size_t>(extent) * roi, 0.0);
  const int span = hi - lo;
  for (int j = 0; j < roi; ++j) {
    const double s = lo + static_cast<double>(j) * span / (roi - 1);
    const int i0 = std::min(static_cast<int>(std::floor(s)), hi);
    const double f = s - i0;
    in[static_cast<std::size_t>(j) * extent + i0] += 1.0 - f;
    if (f > 0.0) in[static_cast<std::size_t>(j) * extent + i0 + 1] += f;
  }
  for (int x = lo; x <= hi; ++x) {
    const double u = static_cast<double>(x - lo) * (roi - 1) / span;
    const int j0 = std::min(static_cast<int>(std::floor(u)), roi - 1);
    const double f = u - j0;
    out[static_cast<std::size_t>(x) * roi + j0] += 1.0 - f;
    if (f > 0.0) out[static_cast<std::size_t>(x) * roi + j0 + 1] += f;
  }
}

torch::Tensor stack_maps(const std::vector<RoiMapping>& mappings,
                         std::vector<double> RoiMapping::*member, int rows, int cols,
                         torch::Dtype dtype) {
  auto out = torch::empty({static_cast<long>(mappings.size()), rows, cols}, torch::kFloat64);
  auto acc = out.accessor<double, 3>();
  for (std::size_t b = 0; b < mappings.size(); ++b) {
    const auto& values = mappings[b].*member;
    for (int r = 0; r < rows; ++r) {
      for (int c = 0; c < cols; ++c) acc[b][r][c] = values[static_cast<std::size_t>(r) * cols + c];
    }
  }
  return out.to(dtype);
}

}  // namespace

RoiMapping roi_mapping(const Box& support, ImageSize image, int roi) {
  require(roi >= 2, ErrorKind::Config, "ROI size must be at least 2");
  require(!support.empty(), ErrorKind::Geometry, "ROI mapping of an empty attention support");
  require(image.height >= roi && image.width >= roi, ErrorKind::Config,
          "ROI size " + std::to_string(roi) + " exceeds the image size");

  RoiMapping m;
  m.roi = roi;
  m.image = image;
  m.exact = support.width() <= roi && support.height() <= roi;

  if (support.width() <= roi) {
    const int x0 = std::clamp(support.x0 - (roi - support.width()) / 2, 0, image.width - roi);
    crop_axis(x0, roi, image.width, m.cols_in, m.cols_out);
    m.window.x0 = x0;
    m.window.x1 = x0 + roi - 1;
  } else {
    resample_axis(support.x0, support.x1, roi, image.width, m.cols_in, m.cols_out);
    m.window.x0 = support.x0;
    m.window.x1 = support.x1;
  }
  if (support.height() <= roi) {
    const int y0 = std::clamp(support.y0 - (roi - support.height()) / 2, 0, image.height - roi);
    crop_axis(y0, roi, image.height, m.rows_in, m.rows_out);
    m.window.y0 = y0;
    m.window.y1 = y0 + roi - 1;
  } else {
    resample_axis(support.y0, support.y1, roi, image.height, m.rows_in, m.rows_out);
    m.window.y0 = support.y0;
    m.window.y1 = support.y1;
  }
  return m;
}

torch::Tensor crop_windows(const torch::Tensor& faces, const std::vector<RoiMapping>& mappings) {
  require(faces.dim() == 4 && faces.size(0) == static_cast<long>(mappings.size()),
          ErrorKind::Shape, "crop_windows: batch/mapping mismatch");
  require(!mappings.empty(), ErrorKind::Shape, "crop_windows: empty batch");
  const auto& first = mappings.front();
  require(faces.size(2) == first.image.height && faces.size(3) == first.image.width,
          ErrorKind::Shape, "crop_windows: face size does not match the mapping");
  const auto dtype = faces.scalar_type();
  auto rows = stack_maps(mappings, &RoiMapping::rows_in, first.roi, first.image.height, dtype);
  auto cols = stack_maps(mappings, &RoiMapping::cols_in, first.roi, first.image.width, dtype);
  return rows.unsqueeze(1).matmul(faces).matmul(cols.transpose(1, 2).unsqueeze(1));
}

torch::Tensor paste_windows(const torch::Tensor& windows, const std::vector<RoiMapping>& mappings) {
  require(windows.dim() == 4 && windows.size(0) == static_cast<long>(mappings.size()),
          ErrorKind::Shape, "paste_windows: batch/mapping mismatch");
  require(!mappings.empty(), ErrorKind::Shape, "paste_windows: empty batch");
  const auto& first = mappings.front();
  require(windows.size(2) == first.roi && windows.size(3) == first.roi, ErrorKind::Shape,
          "paste_windows: window size does not match the mapping");
  const auto dtype = windows.scalar_type();
  auto rows = stack_maps(mappings, &RoiMapping::rows_out, first.image.height, first.roi, dtype);
  auto cols = stack_maps(mappings, &RoiMapping::cols_out, first.image.width, first.roi, dtype);
  return rows.unsqueeze(1).matmul(windows).matmul(cols.transpose(1, 2).unsqueeze(1));
}

}  // namespace lacgan
