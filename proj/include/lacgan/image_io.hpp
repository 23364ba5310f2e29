#pragma once

#include <string>

#include "lacgan/au_geometry.hpp"

namespace lacgan {

/// Reads an 8-bit color image and maps it to RGB floats in [-1, 1].
Image read_image(const std::string& path);

/// Quantizes to 8 bits (round((v + 1) * 127.5), clamped) and writes PNG.
void write_image(const std::string& path, const Image& image);

/// Writes the map as an 8-bit grayscale PNG, weight 1 -> 255.
void write_attention(const std::string& path, const AttentionMap& attention);

/// 68 rows of "x,y".
LandmarkSet read_landmarks(const std::string& path);
void write_landmarks(const std::string& path, const LandmarkSet& landmarks);

/// Value an image pixel takes after a PNG write/read round trip.
inline float quantize_pixel(float v) {
  float p = (v + 1.0f) * 127.5f;
  p = p < 0.0f ? 0.0f : (p > 255.0f ? 255.0f : p);
  return static_cast<float>(static_cast<int>(p + 0.5f)) / 127.5f - 1.0f;
}

}  // namespace lacgan
