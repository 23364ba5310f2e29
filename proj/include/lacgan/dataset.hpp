#pragma once

// Dataset ingestion: manifests, similarity alignment, subject-disjoint
// splits and the procedural toy dataset.

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "lacgan/au_geometry.hpp"

namespace lacgan {

enum class AuLabel : std::uint8_t { Absent, Present, Unknown };

using AuLabels = std::array<AuLabel, kNumAus>;

/// Maps a FACS code to occurrence: 9 (or negative) is unknown, values at or
/// above `presence_threshold` are present, everything else absent.
AuLabel binarize_intensity(int code, int presence_threshold = 1);

struct Sample {
  std::string name;  // image path relative to the dataset root
  Image image;
  AuLabels labels{};
  LandmarkSet landmarks;
  std::string subject_id;
};

struct ManifestRow {
  std::string image;
  std::string landmarks;
  std::string subject;
  AuLabels labels{};
  bool operator==(const ManifestRow&) const = default;
};

/// CSV manifest: image,landmarks,subject,AU1,...,AU24 with labels 0/1/9.
struct DatasetManifest {
  std::string root;
  std::vector<ManifestRow> rows;

  static DatasetManifest read(const std::string& path, int presence_threshold = 1);
  /// Writes `manifest.csv` under `root`.
  void write() const;
  std::string path() const;
  /// Writes the manifest to another file, re-expressing the image and
  /// landmark paths relative to that file's directory.
  void write_as(const std::string& file) const;

  /// Throws a data error naming the first missing file.
  void check_files() const;
  std::vector<std::string> subjects() const;
};

/// Ordered subject assignment: subject k of n (sorted) goes to fold k * folds / n.
struct FoldSpec {
  int folds = 3;
  int test_fold = 0;
};

std::pair<DatasetManifest, DatasetManifest> split_subjects(const DatasetManifest& manifest,
                                                           const FoldSpec& spec);

// --- alignment ---------------------------------------------------------------

/// q = [a -b; b a] p + t
struct Similarity {
  double a = 1.0;
  double b = 0.0;
  double tx = 0.0;
  double ty = 0.0;

  Point apply(const Point& p) const { return {a * p.x - b * p.y + tx, b * p.x + a * p.y + ty}; }
  double scale() const;
  double rotation() const;
};

/// Least-squares similarity mapping `from` onto `to` (no reflection).
Similarity fit_similarity(const std::vector<Point>& from, const std::vector<Point>& to);

/// Mean 68-point face laid out in a size x size frame. Eye centers sit on
/// y = 0.38 * size with inter-ocular distance 0.45 * size.
LandmarkSet canonical_landmarks(int size);

/// Eye centers and nose tip, the points alignment fits.
std::vector<Point> alignment_anchors(const LandmarkSet& landmarks);

struct AlignedFace {
  Image image;
  LandmarkSet landmarks;
  Similarity transform;
};

/// Warps the face so its anchors best match the canonical template.
/// Throws an alignment error for degenerate (collinear) anchors.
AlignedFace align_face(const Image& image, const LandmarkSet& landmarks, int target_size);

struct LoadOptions {
  bool align = false;
  int image_size = 200;
};

/// Loads every row; unaligned images must already be image_size square.
std::vector<Sample> load_samples(const DatasetManifest& manifest, const LoadOptions& options);

// --- toy data ------------------------------------------------------------------

/// AUs used by toy datasets with K active units: the first K of this order.
std::vector<Au> toy_aus(int count);

struct ToyFaceParams {
  double level = -0.4;
  std::array<double, 3> tint{};
  std::array<double, 2> amplitude{};
  std::array<double, 2> period{};
  std::array<double, 2> angle{};
  std::array<double, 2> phase{};
};

ToyFaceParams toy_subject_params(std::uint64_t seed, int subject);

/// Renders one toy face (before 8-bit quantization). `active[i]` switches
/// the appearance change of `aus[i]` on.
Image render_toy_face(const ToyFaceParams& params, double jitter, int size,
                      const AURuleTable& rules, const std::vector<Au>& aus,
                      const std::vector<bool>& active);

/// Pixel offsets, relative to the rounded AU center, that the toy
/// appearance change brightens, with their added value.
struct ToyBump {
  int dx;
  int dy;
  float value;
};
const std::vector<ToyBump>& toy_bump();

struct ToyDatasetOptions {
  std::uint64_t seed = 0;
  int subjects = 10;
  int per_subject = 200;
  int size = 64;
  int active_aus = 4;
};

/// Writes images/, landmarks/, manifest.csv, rules.ini and toy.json under
/// `out_dir`. Byte-identical output for a fixed seed.
DatasetManifest generate_toy_dataset(const ToyDatasetOptions& options, const std::string& out_dir);

struct ToyMetadata {
  std::vector<Au> aus;
  int size = 64;
  AURuleTable rules;
};

/// Reads toy.json + rules.ini next to a manifest, if present.
std::optional<ToyMetadata> read_toy_metadata(const std::string& dataset_root);

}  // namespace lacgan
