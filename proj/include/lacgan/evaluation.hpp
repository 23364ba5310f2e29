#pragma once

// AU detectors, F1/accuracy and the real-versus-synthetic gap report.

#include <array>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "lacgan/dataset.hpp"

namespace lacgan {

enum class Prediction : std::uint8_t { Absent, Present, Unsupported };
using PredictionRow = std::array<Prediction, kNumAus>;

class Detector {
 public:
  virtual ~Detector() = default;
  virtual std::string name() const = 0;
  virtual std::vector<Au> supported() const = 0;
  /// One row per manifest row, in manifest order.
  virtual std::vector<PredictionRow> predict(const DatasetManifest& set) = 0;
};

/// Thresholds the toy appearance statistic: mean of the 3x3 core around the
/// rounded AU center minus the mean of the ring at Chebyshev distance 3-4.
class ToyOracleDetector final : public Detector {
 public:
  static constexpr double kDefaultThreshold = 0.35;

  ToyOracleDetector(AURuleTable rules, std::vector<Au> aus,
                    double threshold = kDefaultThreshold);

  std::string name() const override { return "toy-oracle"; }
  std::vector<Au> supported() const override { return aus_; }
  std::vector<PredictionRow> predict(const DatasetManifest& set) override;
  PredictionRow predict_image(const Image& image, const LandmarkSet& landmarks) const;

  static double statistic(const Image& image, const Point& center);

 private:
  AURuleTable rules_;
  std::vector<Au> aus_;
  double threshold_;
};

/// Adapter for an external detector whose predictions were exported to
/// `<manifest>.<name>.csv`: header "image,AU1,...", one row per image with
/// 0/1 per AU ("-" or a missing column for unsupported AUs).
class CsvDetector final : public Detector {
 public:
  CsvDetector(std::string name, std::vector<Au> supported);
  /// OpenFace AU classifier: no AU24.
  static std::unique_ptr<CsvDetector> openface();
  /// JAA-Net: all twelve AUs.
  static std::unique_ptr<CsvDetector> jaanet();

  std::string name() const override { return name_; }
  std::vector<Au> supported() const override { return supported_; }
  std::vector<PredictionRow> predict(const DatasetManifest& set) override;
  std::string predictions_path(const DatasetManifest& set) const;

 private:
  std::string name_;
  std::vector<Au> supported_;
};

/// "toy-oracle" (needs the dataset's rule table and AUs), "openface", "jaanet".
std::unique_ptr<Detector> make_detector(const std::string& name, const std::string& dataset_root);

struct Confusion {
  std::int64_t tp = 0, fp = 0, fn = 0, tn = 0;
};

struct F1Accuracy {
  double f1 = 0.0;   // percent
  double acc = 0.0;  // percent
  Confusion counts;
};

/// Presence is the positive class; unknown truth entries are skipped.
/// Throws a metric error when nothing is evaluable.
F1Accuracy f1_accuracy(std::span<const Prediction> predictions, std::span<const AuLabel> truth);
F1Accuracy f1_accuracy(const Confusion& counts);

/// Rounds to one decimal, halves away from zero.
double round1(double value);

struct MetricsRow {
  std::string label;  // AU name or "Avg."
  bool supported = true;
  double f1_real = 0.0, acc_real = 0.0;
  double f1_synth = 0.0, acc_synth = 0.0;
  double gap_f1 = 0.0, gap_acc = 0.0;
};

struct MetricsReport {
  std::string detector;
  std::vector<MetricsRow> rows;  // twelve AUs in manifest order
  MetricsRow average;

  std::string to_text() const;
  nlohmann::json to_json() const;
};

/// Builds the report from per-AU predictions (one row per sample). Values
/// are percents rounded to one decimal; gaps are real minus synthetic of the
/// rounded values; averages run over supported AUs only.
MetricsReport build_report(const std::string& detector, std::span<const Au> supported,
                           std::span<const PredictionRow> real_pred,
                           std::span<const AuLabels> real_truth,
                           std::span<const PredictionRow> synth_pred,
                           std::span<const AuLabels> synth_truth);

MetricsReport gap_report(Detector& detector, const DatasetManifest& real,
                         const DatasetManifest& synth);

}  // namespace lacgan
