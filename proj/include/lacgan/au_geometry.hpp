#pragma once

// Landmark-anchored AU regions: center rules, Manhattan-decay attention
// rasters, weighted ROI extraction and attention-masked compositing.

#include <array>
#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace lacgan {

/// The twelve BP4D action units, in manifest column order.
enum class Au : std::uint8_t { AU1, AU2, AU4, AU6, AU7, AU10, AU12, AU14, AU15, AU17, AU23, AU24 };

inline constexpr std::size_t kNumAus = 12;
inline constexpr std::array<Au, kNumAus> kAllAus = {Au::AU1,  Au::AU2,  Au::AU4,  Au::AU6,
                                                     Au::AU7,  Au::AU10, Au::AU12, Au::AU14,
                                                     Au::AU15, Au::AU17, Au::AU23, Au::AU24};

constexpr std::size_t au_index(Au au) noexcept { return static_cast<std::size_t>(au); }
int au_number(Au au) noexcept;
std::string au_name(Au au);
/// Accepts "AU12", "au12" or "12". Throws a configuration error otherwise.
Au parse_au(std::string_view text);

struct Point {
  double x = 0.0;
  double y = 0.0;
  bool operator==(const Point&) const = default;
};

struct ImageSize {
  int height = 0;
  int width = 0;
  bool operator==(const ImageSize&) const = default;
};

/// 68-point facial landmarks in image pixel coordinates.
class LandmarkSet {
 public:
  static constexpr std::size_t kCount = 68;

  LandmarkSet() = default;
  /// Throws a data error unless exactly 68 finite points are given.
  explicit LandmarkSet(std::vector<Point> points);

  const std::vector<Point>& points() const noexcept { return points_; }
  const Point& operator[](std::size_t i) const { return points_.at(i); }
  bool empty() const noexcept { return points_.empty(); }

  bool inside(ImageSize size) const noexcept;

  bool operator==(const LandmarkSet&) const = default;

 private:
  std::vector<Point> points_;
};

struct CenterRule {
  int landmark = 0;
  double dx = 0.0;  // offsets in pixels at AURuleTable::reference_size
  double dy = 0.0;
  bool operator==(const CenterRule&) const = default;
};

/// Editable AU-center rule set. Offsets are expressed at `reference_size`
/// pixels and scaled with the image width; patch size and decay are in
/// pixels of the image being rasterized.
struct AURuleTable {
  std::map<Au, std::vector<CenterRule>> rules;
  int patch_half_size = 10;
  double decay_rate = 0.095;
  double reference_size = 200.0;

  /// Throws a configuration error when an invariant does not hold.
  void validate() const;

  const std::vector<CenterRule>& centers_for(Au au) const;

  /// Brow/eye/cheek/mouth/chin rules over 68-point landmarks, 200 px faces.
  static AURuleTable face_default();
  /// Single-center rules sized for the procedural toy faces (64 px reference).
  static AURuleTable toy_default();

  static AURuleTable from_ini(const std::string& text);
  static AURuleTable load(const std::string& path);
  std::string to_ini() const;

  bool operator==(const AURuleTable&) const = default;
};

/// H x W x 3 raster, row-major with interleaved channels.
class Image {
 public:
  static constexpr int kChannels = 3;

  Image() = default;
  Image(int height, int width, float fill = 0.0f);
  Image(int height, int width, std::vector<float> pixels);

  int height() const noexcept { return height_; }
  int width() const noexcept { return width_; }
  ImageSize size() const noexcept { return {height_, width_}; }

  float& at(int y, int x, int c) { return pixels_[index(y, x, c)]; }
  float at(int y, int x, int c) const { return pixels_[index(y, x, c)]; }

  std::vector<float>& pixels() noexcept { return pixels_; }
  const std::vector<float>& pixels() const noexcept { return pixels_; }

  bool operator==(const Image&) const = default;

 private:
  std::size_t index(int y, int x, int c) const noexcept {
    return (static_cast<std::size_t>(y) * width_ + x) * kChannels + c;
  }

  int height_ = 0;
  int width_ = 0;
  std::vector<float> pixels_;
};

/// Per-pixel AU weights in [0, 1].
class AttentionMap {
 public:
  AttentionMap() = default;
  AttentionMap(Au au, int height, int width);

  Au au() const noexcept { return au_; }
  int height() const noexcept { return height_; }
  int width() const noexcept { return width_; }
  ImageSize size() const noexcept { return {height_, width_}; }

  float& at(int y, int x) { return weights_[static_cast<std::size_t>(y) * width_ + x]; }
  float at(int y, int x) const { return weights_[static_cast<std::size_t>(y) * width_ + x]; }

  std::vector<float>& weights() noexcept { return weights_; }
  const std::vector<float>& weights() const noexcept { return weights_; }

  bool operator==(const AttentionMap&) const = default;

 private:
  Au au_ = Au::AU1;
  int height_ = 0;
  int width_ = 0;
  std::vector<float> weights_;
};

/// Inclusive pixel bounds; empty when x1 < x0.
struct Box {
  int x0 = 0;
  int y0 = 0;
  int x1 = -1;
  int y1 = -1;
  bool empty() const noexcept { return x1 < x0 || y1 < y0; }
  int width() const noexcept { return x1 - x0 + 1; }
  int height() const noexcept { return y1 - y0 + 1; }
  bool operator==(const Box&) const = default;
};

/// One center per rule: landmark + scaled offset, clamped to [0, W-1] x [0, H-1].
std::vector<Point> au_centers(const LandmarkSet& landmarks, const AURuleTable& rules, Au au,
                              ImageSize size);

/// weight(p) = max over centers of max(0, 1 - decay * |p - c|_1), zero outside
/// the patch box of every center.
AttentionMap attention_map(std::span<const Point> centers, const AURuleTable& rules,
                           ImageSize size, Au au);

/// Elementwise A * X, broadcast over channels.
Image extract_roi(const Image& source, const AttentionMap& attention);

/// Divides each weight by max(1, sum of weights at that pixel).
std::vector<AttentionMap> normalize_overlap(std::vector<AttentionMap> maps);

/// sum_i [A_i > 0] * G_i + (1 - sum_i A_i) * X. Pixels with zero total
/// attention are copied from the source unchanged. Attentions must already
/// be overlap-normalized.
Image composite(const Image& source, std::span<const Image> generated,
                std::span<const AttentionMap> attentions);

/// Bounding box of the nonzero weights.
Box support_box(const AttentionMap& attention);

/// Rasterizes every AU in `aus` and normalizes their overlap.
std::vector<AttentionMap> au_attention_maps(const LandmarkSet& landmarks, const AURuleTable& rules,
                                            std::span<const Au> aus, ImageSize size);

}  // namespace lacgan
