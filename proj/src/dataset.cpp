#include "lacgan/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <numbers>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>
#include <opencv2/imgproc.hpp>

#include "lacgan/errors.hpp"
#include "lacgan/image_io.hpp"
#include "lacgan/seeding.hpp"

namespace fs = std::filesystem;

namespace lacgan {

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  std::istringstream in(line);
  while (std::getline(in, field, ',')) fields.push_back(field);
  if (!line.empty() && line.back() == ',') fields.emplace_back();
  return fields;
}

std::string trim(std::string s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

AuLabel parse_label(const std::string& text, int presence_threshold, const std::string& where) {
  if (text.empty() || text == "?") return AuLabel::Unknown;
  int code = 0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), code);
  if (ec != std::errc() || ptr != text.data() + text.size()) {
    fail(ErrorKind::Data, where + ": invalid AU code '" + text + "'");
  }
  return binarize_intensity(code, presence_threshold);
}

const char* label_code(AuLabel label) {
  switch (label) {
    case AuLabel::Absent: return "0";
    case AuLabel::Present: return "1";
    case AuLabel::Unknown: return "9";
  }
  return "9";
}

}  // namespace

AuLabel binarize_intensity(int code, int presence_threshold) {
  if (code < 0 || code == 9) return AuLabel::Unknown;
  return code >= presence_threshold ? AuLabel::Present : AuLabel::Absent;
}

// --- manifest ------------------------------------------------------------------

std::string DatasetManifest::path() const { return (fs::path(root) / "manifest.csv").string(); }

DatasetManifest DatasetManifest::read(const std::string& path, int presence_threshold) {
  fs::path file(path);
  if (fs::is_directory(file)) file /= "manifest.csv";
  std::ifstream in(file);
  if (!in) fail(ErrorKind::Data, "cannot open manifest '" + file.string() + "'");

  DatasetManifest manifest;
  manifest.root = file.parent_path().string();

  std::string line;
  if (!std::getline(in, line)) fail(ErrorKind::Data, "manifest '" + file.string() + "' is empty");
  const auto header = split_csv_line(trim(line));
  std::map<std::string, std::size_t> column;
  for (std::size_t i = 0; i < header.size(); ++i) column[trim(header[i])] = i;
  for (const char* required : {"image", "landmarks", "subject"}) {
    if (!column.count(required)) {
      fail(ErrorKind::Data, "manifest is missing column '" + std::string(required) + "'");
    }
  }
  std::array<std::size_t, kNumAus> au_column{};
  for (Au au : kAllAus) {
    auto it = column.find(au_name(au));
    if (it == column.end()) fail(ErrorKind::Data, "manifest is missing column " + au_name(au));
    au_column[au_index(au)] = it->second;
  }

  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    line = trim(line);
    if (line.empty()) continue;
    const auto fields = split_csv_line(line);
    const std::string where = file.string() + ":" + std::to_string(line_no);
    if (fields.size() < header.size()) fail(ErrorKind::Data, where + ": too few columns");
    ManifestRow row;
    row.image = trim(fields[column["image"]]);
    row.landmarks = trim(fields[column["landmarks"]]);
    row.subject = trim(fields[column["subject"]]);
    for (Au au : kAllAus) {
      row.labels[au_index(au)] =
          parse_label(trim(fields[au_column[au_index(au)]]), presence_threshold, where);
    }
    manifest.rows.push_back(std::move(row));
  }
  return manifest;
}

namespace {

void write_manifest_file(const DatasetManifest& manifest, const fs::path& file) {
  std::ofstream out(file, std::ios::binary);
  if (!out) fail(ErrorKind::Io, "cannot write manifest '" + file.string() + "'");
  out << "image,landmarks,subject";
  for (Au au : kAllAus) out << ',' << au_name(au);
  out << '\n';
  for (const auto& row : manifest.rows) {
    out << row.image << ',' << row.landmarks << ',' << row.subject;
    for (AuLabel l : row.labels) out << ',' << label_code(l);
    out << '\n';
  }
}

}  // namespace

void DatasetManifest::write() const {
  fs::create_directories(root);
  write_manifest_file(*this, path());
}

void DatasetManifest::write_as(const std::string& file) const {
  const fs::path target(file);
  const fs::path dir = target.parent_path().empty() ? fs::path(".") : target.parent_path();
  fs::create_directories(dir);
  DatasetManifest moved{dir.string(), rows};
  auto rebase = [&](const std::string& rel) {
    return fs::proximate(fs::absolute(fs::path(root) / rel), fs::absolute(dir)).generic_string();
  };
  for (auto& row : moved.rows) {
    row.image = rebase(row.image);
    row.landmarks = rebase(row.landmarks);
  }
  write_manifest_file(moved, target);
}

void DatasetManifest::check_files() const {
  for (const auto& row : rows) {
    for (const auto* rel : {&row.image, &row.landmarks}) {
      if (!fs::exists(fs::path(root) / *rel)) {
        fail(ErrorKind::Data, "manifest references missing file '" + *rel + "'");
      }
    }
  }
}

std::vector<std::string> DatasetManifest::subjects() const {
  std::set<std::string> unique;
  for (const auto& row : rows) unique.insert(row.subject);
  return {unique.begin(), unique.end()};
}

std::pair<DatasetManifest, DatasetManifest> split_subjects(const DatasetManifest& manifest,
                                                           const FoldSpec& spec) {
  const auto subjects = manifest.subjects();
  require(spec.folds >= 2, ErrorKind::Config, "split needs at least 2 folds");
  require(spec.test_fold >= 0 && spec.test_fold < spec.folds, ErrorKind::Config,
          "test fold out of range");
  require(subjects.size() >= 2, ErrorKind::Data, "split needs at least 2 subjects");
  require(subjects.size() >= static_cast<std::size_t>(spec.folds), ErrorKind::Data,
          "fewer subjects (" + std::to_string(subjects.size()) + ") than folds (" +
              std::to_string(spec.folds) + ")");

  std::set<std::string> test_subjects;
  const std::size_t n = subjects.size();
  for (std::size_t k = 0; k < n; ++k) {
    if (static_cast<int>(k * spec.folds / n) == spec.test_fold) test_subjects.insert(subjects[k]);
  }

  DatasetManifest train{manifest.root, {}};
  DatasetManifest test{manifest.root, {}};
  for (const auto& row : manifest.rows) {
    (test_subjects.count(row.subject) ? test : train).rows.push_back(row);
  }
  return {std::move(train), std::move(test)};
}

// --- alignment -----------------------------------------------------------------

double Similarity::scale() const { return std::hypot(a, b); }
double Similarity::rotation() const { return std::atan2(b, a); }

Similarity fit_similarity(const std::vector<Point>& from, const std::vector<Point>& to) {
  require(from.size() == to.size() && from.size() >= 2, ErrorKind::Alignment,
          "similarity fit needs at least two point pairs");
  const double n = static_cast<double>(from.size());
  Point mf, mt;
  for (std::size_t i = 0; i < from.size(); ++i) {
    mf.x += from[i].x / n;
    mf.y += from[i].y / n;
    mt.x += to[i].x / n;
    mt.y += to[i].y / n;
  }
  double dot = 0.0, cross = 0.0, norm = 0.0;
  for (std::size_t i = 0; i < from.size(); ++i) {
    const double px = from[i].x - mf.x, py = from[i].y - mf.y;
    const double qx = to[i].x - mt.x, qy = to[i].y - mt.y;
    dot += px * qx + py * qy;
    cross += px * qy - py * qx;
    norm += px * px + py * py;
  }
  require(norm > 1e-12, ErrorKind::Alignment, "similarity fit: source points coincide");
  Similarity s;
  s.a = dot / norm;
  s.b = cross / norm;
  s.tx = mt.x - (s.a * mf.x - s.b * mf.y);
  s.ty = mt.y - (s.b * mf.x + s.a * mf.y);
  return s;
}

LandmarkSet canonical_landmarks(int size) {
  std::vector<Point> unit(LandmarkSet::kCount);
  // jaw 0-16
  for (int k = 0; k <= 16; ++k) {
    const double phi = std::numbers::pi * k / 16.0;
    unit[k] = {0.5 - 0.40 * std::cos(phi), 0.40 + 0.50 * std::sin(phi)};
  }
  // brows 17-21 (image left), 22-26 mirrored
  const double brow_x[5] = {0.18, 0.245, 0.31, 0.375, 0.44};
  const double brow_y[5] = {0.29, 0.265, 0.255, 0.26, 0.275};
  for (int k = 0; k < 5; ++k) {
    unit[17 + k] = {brow_x[k], brow_y[k]};
    unit[26 - k] = {1.0 - brow_x[k], brow_y[k]};
  }
  // nose bridge 27-30 and nostrils 31-35
  const double bridge_y[4] = {0.38, 0.45, 0.52, 0.60};
  for (int k = 0; k < 4; ++k) unit[27 + k] = {0.5, bridge_y[k]};
  for (int k = 0; k < 5; ++k) unit[31 + k] = {0.42 + 0.04 * k, 0.64};
  // eyes 36-41 and 42-47; centers (0.275, 0.38) and (0.725, 0.38)
  const Point left_eye[6] = {{0.205, 0.38}, {0.25, 0.355}, {0.30, 0.355},
                             {0.345, 0.38}, {0.30, 0.405}, {0.25, 0.405}};
  for (int k = 0; k < 6; ++k) unit[36 + k] = left_eye[k];
  const int mirror[6] = {45, 44, 43, 42, 47, 46};
  for (int k = 0; k < 6; ++k) unit[mirror[k]] = {1.0 - left_eye[k].x, left_eye[k].y};
  // outer lips 48-59
  const Point outer[12] = {{0.36, 0.75},  {0.40, 0.72},  {0.45, 0.705}, {0.5, 0.71},
                           {0.55, 0.705}, {0.60, 0.72},  {0.64, 0.75},  {0.60, 0.78},
                           {0.55, 0.795}, {0.5, 0.80},   {0.45, 0.795}, {0.40, 0.78}};
  for (int k = 0; k < 12; ++k) unit[48 + k] = outer[k];
  // inner lips 60-67
  const Point inner[8] = {{0.39, 0.75}, {0.45, 0.735}, {0.5, 0.735},  {0.55, 0.735},
                          {0.61, 0.75}, {0.55, 0.765}, {0.5, 0.765},  {0.45, 0.765}};
  for (int k = 0; k < 8; ++k) unit[60 + k] = inner[k];

  for (auto& p : unit) p = {p.x * size, p.y * size};
  return LandmarkSet(std::move(unit));
}

std::vector<Point> alignment_anchors(const LandmarkSet& landmarks) {
  Point left, right;
  for (int k = 0; k < 6; ++k) {
    left.x += landmarks[36 + k].x / 6.0;
    left.y += landmarks[36 + k].y / 6.0;
    right.x += landmarks[42 + k].x / 6.0;
    right.y += landmarks[42 + k].y / 6.0;
  }
  return {left, right, landmarks[30]};
}

AlignedFace align_face(const Image& image, const LandmarkSet& landmarks, int target_size) {
  require(target_size > 0, ErrorKind::Config, "alignment target size must be positive");
  require(!landmarks.empty(), ErrorKind::Data, "alignment needs landmarks");
  const auto anchors = alignment_anchors(landmarks);
  const double ex = anchors[1].x - anchors[0].x, ey = anchors[1].y - anchors[0].y;
  const double eye_dist2 = ex * ex + ey * ey;
  require(eye_dist2 > 1.0, ErrorKind::Alignment, "alignment: eye centers coincide");
  const double nx = anchors[2].x - anchors[0].x, ny = anchors[2].y - anchors[0].y;
  if (std::abs(ex * ny - ey * nx) / eye_dist2 < 1e-3) {
    fail(ErrorKind::Alignment, "alignment: eye and nose anchors are collinear");
  }

  const auto tmpl = alignment_anchors(canonical_landmarks(target_size));
  const Similarity s = fit_similarity(anchors, tmpl);

  cv::Mat src(image.height(), image.width(), CV_32FC3,
              const_cast<float*>(image.pixels().data()));
  cv::Mat m = (cv::Mat_<double>(2, 3) << s.a, -s.b, s.tx, s.b, s.a, s.ty);
  cv::Mat dst;
  cv::warpAffine(src, dst, m, cv::Size(target_size, target_size), cv::INTER_LINEAR,
                 cv::BORDER_REPLICATE);

  Image out(target_size, target_size);
  for (int y = 0; y < target_size; ++y) {
    const auto* row = dst.ptr<cv::Vec3f>(y);
    for (int x = 0; x < target_size; ++x) {
      for (int c = 0; c < 3; ++c) out.at(y, x, c) = std::clamp(row[x][c], -1.0f, 1.0f);
    }
  }

  std::vector<Point> moved;
  moved.reserve(LandmarkSet::kCount);
  for (const auto& p : landmarks.points()) moved.push_back(s.apply(p));
  return {std::move(out), LandmarkSet(std::move(moved)), s};
}

std::vector<Sample> load_samples(const DatasetManifest& manifest, const LoadOptions& options) {
  std::vector<Sample> samples;
  samples.reserve(manifest.rows.size());
  const fs::path root(manifest.root);
  for (const auto& row : manifest.rows) {
    Sample s;
    s.name = row.image;
    s.subject_id = row.subject;
    s.labels = row.labels;
    Image image = read_image((root / row.image).string());
    LandmarkSet landmarks = read_landmarks((root / row.landmarks).string());
    if (options.align) {
      auto aligned = align_face(image, landmarks, options.image_size);
      s.image = std::move(aligned.image);
      s.landmarks = std::move(aligned.landmarks);
    } else {
      if (image.height() != options.image_size || image.width() != options.image_size) {
        fail(ErrorKind::Data, "image '" + row.image + "' is " + std::to_string(image.height()) +
                                  "x" + std::to_string(image.width()) + ", expected " +
                                  std::to_string(options.image_size) + " square");
      }
      s.image = std::move(image);
      s.landmarks = std::move(landmarks);
    }
    samples.push_back(std::move(s));
  }
  return samples;
}

// --- toy data ------------------------------------------------------------------

std::vector<Au> toy_aus(int count) {
  static constexpr std::array<Au, kNumAus> order = {Au::AU1,  Au::AU6,  Au::AU12, Au::AU17,
                                                    Au::AU2,  Au::AU4,  Au::AU7,  Au::AU10,
                                                    Au::AU14, Au::AU15, Au::AU23, Au::AU24};
  require(count >= 1 && count <= static_cast<int>(kNumAus), ErrorKind::Config,
          "toy AU count must be in [1, 12]");
  return {order.begin(), order.begin() + count};
}

ToyFaceParams toy_subject_params(std::uint64_t seed, int subject) {
  std::mt19937_64 rng(derive_seed(seed, {0x5eedULL, static_cast<std::uint64_t>(subject)}));
  ToyFaceParams p;
  p.level = uniform(rng, -0.5, -0.25);
  for (auto& t : p.tint) t = uniform(rng, -0.08, 0.08);
  for (int k = 0; k < 2; ++k) {
    p.amplitude[k] = uniform(rng, 0.04, 0.1);
    p.period[k] = uniform(rng, 0.5, 1.0);  // fraction of the image size
    p.angle[k] = uniform(rng, 0.0, std::numbers::pi);
    p.phase[k] = uniform(rng, 0.0, 2.0 * std::numbers::pi);
  }
  return p;
}

const std::vector<ToyBump>& toy_bump() {
  static const std::vector<ToyBump> bump = [] {
    std::vector<ToyBump> b;
    for (int dy = -2; dy <= 2; ++dy) {
      for (int dx = -2; dx <= 2; ++dx) {
        const bool core = std::abs(dx) <= 1 && std::abs(dy) <= 1;
        b.push_back({dx, dy, core ? 0.7f : 0.35f});
      }
    }
    return b;
  }();
  return bump;
}

Image render_toy_face(const ToyFaceParams& params, double jitter, int size,
                      const AURuleTable& rules, const std::vector<Au>& aus,
                      const std::vector<bool>& active) {
  require(aus.size() == active.size(), ErrorKind::Contract, "toy face: aus/active mismatch");
  Image image(size, size);
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      double v = params.level + jitter;
      for (int k = 0; k < 2; ++k) {
        const double u = x * std::cos(params.angle[k]) + y * std::sin(params.angle[k]);
        v += params.amplitude[k] *
             std::sin(2.0 * std::numbers::pi * u / (params.period[k] * size) + params.phase[k]);
      }
      for (int c = 0; c < 3; ++c) image.at(y, x, c) = static_cast<float>(v + params.tint[c]);
    }
  }

  const auto landmarks = canonical_landmarks(size);
  for (std::size_t i = 0; i < aus.size(); ++i) {
    if (!active[i]) continue;
    const auto centers = au_centers(landmarks, rules, aus[i], {size, size});
    for (const auto& c : centers) {
      const int cx = static_cast<int>(std::lround(c.x));
      const int cy = static_cast<int>(std::lround(c.y));
      for (const auto& b : toy_bump()) {
        const int x = cx + b.dx, y = cy + b.dy;
        if (x < 0 || y < 0 || x >= size || y >= size) continue;
        for (int ch = 0; ch < 3; ++ch) image.at(y, x, ch) += b.value;
      }
    }
  }
  return image;
}

DatasetManifest generate_toy_dataset(const ToyDatasetOptions& options, const std::string& out_dir) {
  require(options.size >= 32, ErrorKind::Config, "toy image size must be >= 32");
  require(options.subjects >= 1 && options.per_subject >= 1, ErrorKind::Config,
          "toy dataset needs at least one subject and one sample per subject");
  const auto aus = toy_aus(options.active_aus);
  const auto rules = AURuleTable::toy_default();
  const ImageSize size{options.size, options.size};
  const auto landmarks = canonical_landmarks(options.size);

  // Every bump pixel must fall inside its AU's attention support.
  for (Au au : aus) {
    const auto centers = au_centers(landmarks, rules, au, size);
    const auto map = attention_map(centers, rules, size, au);
    for (const auto& c : centers) {
      for (const auto& b : toy_bump()) {
        const int x = static_cast<int>(std::lround(c.x)) + b.dx;
        const int y = static_cast<int>(std::lround(c.y)) + b.dy;
        require(x >= 0 && y >= 0 && x < size.width && y < size.height && map.at(y, x) > 0.0f,
                ErrorKind::Config, "toy appearance of " + au_name(au) + " leaves its support");
      }
    }
  }

  const fs::path root(out_dir);
  fs::create_directories(root / "images");
  fs::create_directories(root / "landmarks");

  DatasetManifest manifest{root.string(), {}};
  char name[64];
  for (int s = 0; s < options.subjects; ++s) {
    const auto params = toy_subject_params(options.seed, s);
    std::snprintf(name, sizeof(name), "S%03d", s);
    const std::string subject = name;
    for (int j = 0; j < options.per_subject; ++j) {
      std::mt19937_64 rng(derive_seed(options.seed, {0x5a3b, static_cast<std::uint64_t>(s),
                                                     static_cast<std::uint64_t>(j)}));
      const double jitter = uniform(rng, -0.05, 0.05);
      std::vector<bool> active(aus.size());
      ManifestRow row;
      row.labels.fill(AuLabel::Absent);
      for (std::size_t i = 0; i < aus.size(); ++i) {
        active[i] = (rng() >> 63) != 0;
        row.labels[au_index(aus[i])] = active[i] ? AuLabel::Present : AuLabel::Absent;
      }
      const Image face = render_toy_face(params, jitter, options.size, rules, aus, active);

      std::snprintf(name, sizeof(name), "S%03d_%04d", s, j);
      row.image = std::string("images/") + name + ".png";
      row.landmarks = std::string("landmarks/") + name + ".csv";
      row.subject = subject;
      write_image((root / row.image).string(), face);
      write_landmarks((root / row.landmarks).string(), landmarks);
      manifest.rows.push_back(std::move(row));
    }
  }
  manifest.write();

  {
    std::ofstream rules_out(root / "rules.ini", std::ios::binary);
    rules_out << rules.to_ini();
  }
  nlohmann::json meta;
  meta["seed"] = options.seed;
  meta["subjects"] = options.subjects;
  meta["per_subject"] = options.per_subject;
  meta["size"] = options.size;
  std::vector<std::string> names;
  for (Au au : aus) names.push_back(au_name(au));
  meta["aus"] = names;
  std::ofstream meta_out(root / "toy.json", std::ios::binary);
  meta_out << meta.dump(2) << '\n';
  return manifest;
}

std::optional<ToyMetadata> read_toy_metadata(const std::string& dataset_root) {
  const fs::path root(dataset_root);
  if (!fs::exists(root / "toy.json")) return std::nullopt;
  std::ifstream in(root / "toy.json");
  nlohmann::json meta;
  try {
    in >> meta;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::Data, std::string("toy.json: ") + e.what());
  }
  ToyMetadata out;
  for (const auto& name : meta.at("aus")) out.aus.push_back(parse_au(name.get<std::string>()));
  out.size = meta.at("size").get<int>();
  out.rules = fs::exists(root / "rules.ini") ? AURuleTable::load((root / "rules.ini").string())
                                              : AURuleTable::toy_default();
  return out;
}

}  // namespace lacgan
