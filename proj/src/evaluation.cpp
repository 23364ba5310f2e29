#include "lacgan/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "lacgan/errors.hpp"
#include "lacgan/image_io.hpp"

namespace fs = std::filesystem;

namespace lacgan {

// --- toy oracle --------------------------------------------------------------------

ToyOracleDetector::ToyOracleDetector(AURuleTable rules, std::vector<Au> aus, double threshold)
    : rules_(std::move(rules)), aus_(std::move(aus)), threshold_(threshold) {
  rules_.validate();
  require(!aus_.empty(), ErrorKind::Config, "toy-oracle detector needs at least one AU");
}

double ToyOracleDetector::statistic(const Image& image, const Point& center) {
  const int cx = static_cast<int>(std::lround(center.x));
  const int cy = static_cast<int>(std::lround(center.y));
  double core = 0.0, ring = 0.0;
  int n_core = 0, n_ring = 0;
  for (int dy = -4; dy <= 4; ++dy) {
    for (int dx = -4; dx <= 4; ++dx) {
      const int x = cx + dx, y = cy + dy;
      if (x < 0 || y < 0 || x >= image.width() || y >= image.height()) continue;
      const int d = std::max(std::abs(dx), std::abs(dy));
      if (d == 2) continue;
      double v = 0.0;
      for (int c = 0; c < Image::kChannels; ++c) v += image.at(y, x, c);
      v /= Image::kChannels;
      if (d <= 1) {
        core += v;
        ++n_core;
      } else {
        ring += v;
        ++n_ring;
      }
    }
  }
  require(n_core > 0 && n_ring > 0, ErrorKind::Data, "toy statistic: center outside the image");
  return core / n_core - ring / n_ring;
}

PredictionRow ToyOracleDetector::predict_image(const Image& image,
                                               const LandmarkSet& landmarks) const {
  PredictionRow row;
  row.fill(Prediction::Unsupported);
  for (Au au : aus_) {
    const auto centers = au_centers(landmarks, rules_, au, image.size());
    bool present = false;
    for (const auto& c : centers) present = present || statistic(image, c) > threshold_;
    row[au_index(au)] = present ? Prediction::Present : Prediction::Absent;
  }
  return row;
}

std::vector<PredictionRow> ToyOracleDetector::predict(const DatasetManifest& set) {
  std::vector<PredictionRow> out;
  out.reserve(set.rows.size());
  const fs::path root(set.root);
  for (const auto& row : set.rows) {
    out.push_back(predict_image(read_image((root / row.image).string()),
                                read_landmarks((root / row.landmarks).string())));
  }
  return out;
}

// --- CSV adapters ------------------------------------------------------------------

CsvDetector::CsvDetector(std::string name, std::vector<Au> supported)
    : name_(std::move(name)), supported_(std::move(supported)) {}

std::unique_ptr<CsvDetector> CsvDetector::openface() {
  std::vector<Au> aus(kAllAus.begin(), kAllAus.end());
  aus.erase(std::find(aus.begin(), aus.end(), Au::AU24));
  return std::make_unique<CsvDetector>("openface", aus);
}

std::unique_ptr<CsvDetector> CsvDetector::jaanet() {
  return std::make_unique<CsvDetector>("jaanet", std::vector<Au>(kAllAus.begin(), kAllAus.end()));
}

std::string CsvDetector::predictions_path(const DatasetManifest& set) const {
  return set.path() + "." + name_ + ".csv";
}

std::vector<PredictionRow> CsvDetector::predict(const DatasetManifest& set) {
  const auto path = predictions_path(set);
  std::ifstream in(path);
  require(in.good(), ErrorKind::Data, name_ + ": prediction file '" + path + "' not found");

  auto split = [](const std::string& line) {
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      cell.erase(0, cell.find_first_not_of(" \t\r"));
      cell.erase(cell.find_last_not_of(" \t\r") + 1);
      cells.push_back(cell);
    }
    return cells;
  };

  std::string line;
  require(static_cast<bool>(std::getline(in, line)), ErrorKind::Data, path + " is empty");
  const auto header = split(line);
  std::map<std::string, std::size_t> column;
  for (std::size_t i = 0; i < header.size(); ++i) column[header[i]] = i;
  require(column.count("image") > 0, ErrorKind::Data, path + " has no image column");

  std::map<std::string, PredictionRow> by_image;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto cells = split(line);
    require(cells.size() == header.size(), ErrorKind::Data, path + ": ragged row '" + line + "'");
    PredictionRow row;
    row.fill(Prediction::Unsupported);
    for (Au au : supported_) {
      auto it = column.find(au_name(au));
      require(it != column.end(), ErrorKind::Data,
              name_ + " predictions lack supported " + au_name(au));
      const auto& v = cells[it->second];
      if (v == "1") {
        row[au_index(au)] = Prediction::Present;
      } else if (v == "0") {
        row[au_index(au)] = Prediction::Absent;
      } else {
        fail(ErrorKind::Data, name_ + ": bad " + au_name(au) + " prediction '" + v + "'");
      }
    }
    by_image[cells[column.at("image")]] = row;
  }

  std::vector<PredictionRow> out;
  for (const auto& row : set.rows) {
    auto it = by_image.find(row.image);
    require(it != by_image.end(), ErrorKind::Data,
            name_ + ": no prediction for '" + row.image + "'");
    out.push_back(it->second);
  }
  return out;
}

std::unique_ptr<Detector> make_detector(const std::string& name, const std::string& dataset_root) {
  if (name == "openface") return CsvDetector::openface();
  if (name == "jaanet") return CsvDetector::jaanet();
  if (name == "toy-oracle") {
    auto meta = read_toy_metadata(dataset_root);
    require(meta.has_value(), ErrorKind::Config,
            "toy-oracle detector needs toy.json and rules.ini in '" + dataset_root + "'");
    return std::make_unique<ToyOracleDetector>(meta->rules, meta->aus);
  }
  fail(ErrorKind::Config, "unknown detector '" + name + "'");
}

// --- metrics -------------------------------------------------------------------------

double round1(double value) {
  // Nudge by a relative epsilon so values like 66.65 computed as 66.6499...
  // still round half away from zero.
  const double scaled = value * 10.0;
  const double nudged = scaled + std::copysign(1e-9 * std::max(1.0, std::abs(scaled)), scaled);
  return std::round(nudged) / 10.0;
}

F1Accuracy f1_accuracy(const Confusion& c) {
  const auto total = c.tp + c.fp + c.fn + c.tn;
  require(total > 0, ErrorKind::Metric, "no evaluable samples");
  F1Accuracy r;
  r.counts = c;
  const double denom = 2.0 * c.tp + c.fp + c.fn;
  r.f1 = denom > 0.0 ? 100.0 * 2.0 * c.tp / denom : 0.0;
  r.acc = 100.0 * static_cast<double>(c.tp + c.tn) / static_cast<double>(total);
  return r;
}

F1Accuracy f1_accuracy(std::span<const Prediction> predictions, std::span<const AuLabel> truth) {
  require(predictions.size() == truth.size(), ErrorKind::Metric,
          "predictions and labels differ in length");
  Confusion c;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i] == AuLabel::Unknown) continue;
    require(predictions[i] != Prediction::Unsupported, ErrorKind::Metric,
            "prediction missing for an evaluated AU");
    const bool p = predictions[i] == Prediction::Present;
    const bool t = truth[i] == AuLabel::Present;
    if (p && t) ++c.tp;
    else if (p) ++c.fp;
    else if (t) ++c.fn;
    else ++c.tn;
  }
  return f1_accuracy(c);
}

namespace {

F1Accuracy metric_for(Au au, std::span<const PredictionRow> pred, std::span<const AuLabels> truth,
                      const char* which) {
  require(pred.size() == truth.size(), ErrorKind::Metric,
          std::string(which) + " set: predictions and labels differ in length");
  std::vector<Prediction> p;
  std::vector<AuLabel> t;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    p.push_back(pred[i][au_index(au)]);
    t.push_back(truth[i][au_index(au)]);
  }
  try {
    return f1_accuracy(p, t);
  } catch (const Error& e) {
    fail(e.kind(), au_name(au) + " (" + which + "): " + e.what());
  }
}

std::string cell(const MetricsRow& r, double v) {
  if (!r.supported) return "-";
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.1f", v);
  return buf;
}

nlohmann::json row_json(const MetricsRow& r) {
  if (!r.supported) return {{"au", r.label}, {"supported", false}};
  return {{"au", r.label},          {"supported", true},        {"f1_real", r.f1_real},
          {"acc_real", r.acc_real}, {"f1_synth", r.f1_synth},   {"acc_synth", r.acc_synth},
          {"gap_f1", r.gap_f1},     {"gap_acc", r.gap_acc}};
}

}  // namespace

MetricsReport build_report(const std::string& detector, std::span<const Au> supported,
                           std::span<const PredictionRow> real_pred,
                           std::span<const AuLabels> real_truth,
                           std::span<const PredictionRow> synth_pred,
                           std::span<const AuLabels> synth_truth) {
  require(!supported.empty(), ErrorKind::Metric, detector + " supports no AU");
  MetricsReport report;
  report.detector = detector;
  MetricsRow avg;
  avg.label = "Avg.";
  int n = 0;
  for (Au au : kAllAus) {
    MetricsRow row;
    row.label = au_name(au);
    row.supported = std::find(supported.begin(), supported.end(), au) != supported.end();
    if (row.supported) {
      const auto real = metric_for(au, real_pred, real_truth, "real");
      const auto synth = metric_for(au, synth_pred, synth_truth, "synthetic");
      row.f1_real = round1(real.f1);
      row.acc_real = round1(real.acc);
      row.f1_synth = round1(synth.f1);
      row.acc_synth = round1(synth.acc);
      row.gap_f1 = round1(row.f1_real - row.f1_synth);
      row.gap_acc = round1(row.acc_real - row.acc_synth);
      avg.f1_real += row.f1_real;
      avg.acc_real += row.acc_real;
      avg.f1_synth += row.f1_synth;
      avg.acc_synth += row.acc_synth;
      ++n;
    }
    report.rows.push_back(row);
  }
  avg.f1_real = round1(avg.f1_real / n);
  avg.acc_real = round1(avg.acc_real / n);
  avg.f1_synth = round1(avg.f1_synth / n);
  avg.acc_synth = round1(avg.acc_synth / n);
  avg.gap_f1 = round1(avg.f1_real - avg.f1_synth);
  avg.gap_acc = round1(avg.acc_real - avg.acc_synth);
  report.average = avg;
  return report;
}

MetricsReport gap_report(Detector& detector, const DatasetManifest& real,
                         const DatasetManifest& synth) {
  const auto supported = detector.supported();
  const auto real_pred = detector.predict(real);
  const auto synth_pred = detector.predict(synth);
  std::vector<AuLabels> real_truth, synth_truth;
  for (const auto& r : real.rows) real_truth.push_back(r.labels);
  for (const auto& r : synth.rows) synth_truth.push_back(r.labels);
  return build_report(detector.name(), supported, real_pred, real_truth, synth_pred, synth_truth);
}

std::string MetricsReport::to_text() const {
  std::ostringstream out;
  char line[160];
  std::snprintf(line, sizeof(line), "detector: %s (percent; gap = real - synthetic)\n",
                detector.c_str());
  out << line;
  std::snprintf(line, sizeof(line), "%-6s %8s %8s %8s %8s %8s %8s\n", "AU", "F1 real", "Acc real",
                "F1 syn", "Acc syn", "Gap F1", "Gap Acc");
  out << line;
  auto emit = [&](const MetricsRow& r) {
    std::snprintf(line, sizeof(line), "%-6s %8s %8s %8s %8s %8s %8s\n", r.label.c_str(),
                  cell(r, r.f1_real).c_str(), cell(r, r.acc_real).c_str(),
                  cell(r, r.f1_synth).c_str(), cell(r, r.acc_synth).c_str(),
                  cell(r, r.gap_f1).c_str(), cell(r, r.gap_acc).c_str());
    out << line;
  };
  for (const auto& r : rows) emit(r);
  emit(average);
  return out.str();
}

nlohmann::json MetricsReport::to_json() const {
  nlohmann::json j;
  j["detector"] = detector;
  j["rows"] = nlohmann::json::array();
  for (const auto& r : rows) j["rows"].push_back(row_json(r));
  j["average"] = row_json(average);
  return j;
}

}  // namespace lacgan
