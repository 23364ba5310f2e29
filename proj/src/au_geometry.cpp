#include "lacgan/au_geometry.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "lacgan/errors.hpp"

namespace lacgan {

namespace {

constexpr std::array<int, kNumAus> kAuNumbers = {1, 2, 4, 6, 7, 10, 12, 14, 15, 17, 23, 24};

void check_same_size(ImageSize a, ImageSize b, const char* what) {
  if (a != b) {
    fail(ErrorKind::Shape, std::string(what) + ": size mismatch (" + std::to_string(a.height) +
                               "x" + std::to_string(a.width) + " vs " +
                               std::to_string(b.height) + "x" + std::to_string(b.width) + ")");
  }
}

std::string format_number(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, end);
}

double parse_number(const std::string& text, const std::string& context) {
  double value = 0.0;
  const char* first = text.data();
  const char* last = text.data() + text.size();
  if (first != last && *first == '+') ++first;
  auto [ptr, ec] = std::from_chars(first, last, value);
  if (ec != std::errc() || ptr != last) {
    fail(ErrorKind::Config, "rule table: cannot parse number '" + text + "' in " + context);
  }
  return value;
}

}  // namespace

int au_number(Au au) noexcept { return kAuNumbers[au_index(au)]; }

std::string au_name(Au au) { return "AU" + std::to_string(au_number(au)); }

Au parse_au(std::string_view text) {
  std::string_view digits = text;
  if (digits.size() > 2 && (digits[0] == 'A' || digits[0] == 'a') &&
      (digits[1] == 'U' || digits[1] == 'u')) {
    digits.remove_prefix(2);
  }
  int number = 0;
  auto [ptr, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), number);
  if (ec == std::errc() && ptr == digits.data() + digits.size()) {
    for (std::size_t i = 0; i < kNumAus; ++i) {
      if (kAuNumbers[i] == number) return kAllAus[i];
    }
  }
  fail(ErrorKind::Config, "unknown action unit '" + std::string(text) + "'");
}

// ---------------------------------------------------------------------------

LandmarkSet::LandmarkSet(std::vector<Point> points) : points_(std::move(points)) {
  require(points_.size() == kCount, ErrorKind::Data,
          "landmark set must have 68 points, got " + std::to_string(points_.size()));
  for (std::size_t i = 0; i < points_.size(); ++i) {
    require(std::isfinite(points_[i].x) && std::isfinite(points_[i].y), ErrorKind::Data,
            "landmark " + std::to_string(i) + " is not finite");
  }
}

bool LandmarkSet::inside(ImageSize size) const noexcept {
  return std::all_of(points_.begin(), points_.end(), [&](const Point& p) {
    return p.x >= 0.0 && p.y >= 0.0 && p.x < size.width && p.y < size.height;
  });
}

// ---------------------------------------------------------------------------

void AURuleTable::validate() const {
  require(rules.size() == kNumAus, ErrorKind::Config,
          "rule table must cover all 12 AUs, has " + std::to_string(rules.size()));
  for (const auto& [au, centers] : rules) {
    require(!centers.empty(), ErrorKind::Config, "rule table: " + au_name(au) + " has no centers");
    for (const auto& c : centers) {
      require(c.landmark >= 0 && c.landmark < static_cast<int>(LandmarkSet::kCount),
              ErrorKind::Config,
              "rule table: " + au_name(au) + " landmark index out of range: " +
                  std::to_string(c.landmark));
      require(std::isfinite(c.dx) && std::isfinite(c.dy), ErrorKind::Config,
              "rule table: " + au_name(au) + " has a non-finite offset");
    }
  }
  require(patch_half_size >= 1, ErrorKind::Config, "rule table: patch_half_size must be >= 1");
  require(decay_rate > 0.0 && std::isfinite(decay_rate), ErrorKind::Config,
          "rule table: decay_rate must be > 0");
  require(reference_size > 0.0, ErrorKind::Config, "rule table: reference_size must be > 0");
}

const std::vector<CenterRule>& AURuleTable::centers_for(Au au) const {
  auto it = rules.find(au);
  if (it == rules.end()) fail(ErrorKind::Config, "rule table has no entry for " + au_name(au));
  return it->second;
}

AURuleTable AURuleTable::face_default() {
  // One scale unit is 20 px at 200 px (roughly a quarter of the inter-ocular distance).
  AURuleTable t;
  t.patch_half_size = 10;
  t.decay_rate = 0.095;
  t.reference_size = 200.0;
  t.rules = {
      {Au::AU1, {{21, 0, -10}, {22, 0, -10}}},   // above inner brows
      {Au::AU2, {{17, 0, -7}, {26, 0, -7}}},     // above outer brows
      {Au::AU4, {{19, 0, 7}, {24, 0, 7}}},       // below brow centers
      {Au::AU6, {{41, 0, 20}, {46, 0, 20}}},     // cheeks under the lower lids
      {Au::AU7, {{37, 0, 3}, {44, 0, 3}}},       // eye centers
      {Au::AU10, {{50, 0, 0}, {52, 0, 0}}},      // upper lip
      {Au::AU12, {{48, 0, 0}, {54, 0, 0}}},      // lip corners
      {Au::AU14, {{48, -3, 0}, {54, 3, 0}}},     // outside the lip corners
      {Au::AU15, {{48, 0, 5}, {54, 0, 5}}},      // below the lip corners
      {Au::AU17, {{57, 0, 10}, {8, 0, -10}}},    // chin
      {Au::AU23, {{51, 0, 0}, {57, 0, 0}}},      // lip centers
      {Au::AU24, {{62, 0, 0}, {66, 0, 0}}},      // inner lips
  };
  return t;
}

AURuleTable AURuleTable::toy_default() {
  AURuleTable t;
  t.patch_half_size = 7;
  t.decay_rate = 0.125;
  t.reference_size = 64.0;
  t.rules = {
      {Au::AU1, {{27, 0, -8}}},  {Au::AU2, {{17, 0, -3}}},  {Au::AU4, {{19, 0, 2}}},
      {Au::AU6, {{41, 0, 10}}},  {Au::AU7, {{37, 0, 1}}},   {Au::AU10, {{51, 0, -1}}},
      {Au::AU12, {{54, 2, -2}}}, {Au::AU14, {{48, 0, 0}}},  {Au::AU15, {{48, 0, 2}}},
      {Au::AU17, {{8, 0, -4}}},  {Au::AU23, {{62, 0, 0}}},  {Au::AU24, {{66, 0, 0}}},
  };
  return t;
}

AURuleTable AURuleTable::from_ini(const std::string& text) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  std::istringstream in(text);
  try {
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    fail(ErrorKind::Config, std::string("rule table: ") + e.what());
  }

  AURuleTable t;
  t.rules.clear();
  for (const auto& [section, body] : tree) {
    if (section == "global") {
      t.patch_half_size = body.get<int>("patch_half_size", t.patch_half_size);
      t.decay_rate = body.get<double>("decay_rate", t.decay_rate);
      t.reference_size = body.get<double>("reference_size", t.reference_size);
      continue;
    }
    const Au au = parse_au(section);
    std::vector<CenterRule> centers;
    std::istringstream items(body.get<std::string>("centers", ""));
    std::string item;
    while (items >> item) {
      // landmark:dx:dy
      const auto a = item.find(':');
      const auto b = a == std::string::npos ? a : item.find(':', a + 1);
      if (b == std::string::npos) {
        fail(ErrorKind::Config, "rule table: center '" + item + "' in [" + section +
                                    "] must be landmark:dx:dy");
      }
      CenterRule rule;
      rule.landmark = static_cast<int>(parse_number(item.substr(0, a), section));
      rule.dx = parse_number(item.substr(a + 1, b - a - 1), section);
      rule.dy = parse_number(item.substr(b + 1), section);
      centers.push_back(rule);
    }
    if (t.rules.count(au)) fail(ErrorKind::Config, "rule table: duplicate section " + section);
    t.rules.emplace(au, std::move(centers));
  }
  t.validate();
  return t;
}

AURuleTable AURuleTable::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::Config, "cannot open rule table '" + path + "'");
  std::stringstream buffer;
  buffer << in.rdbuf();
  return from_ini(buffer.str());
}

std::string AURuleTable::to_ini() const {
  std::ostringstream out;
  out << "[global]\n"
      << "patch_half_size = " << patch_half_size << "\n"
      << "decay_rate = " << format_number(decay_rate) << "\n"
      << "reference_size = " << format_number(reference_size) << "\n";
  for (const auto& [au, centers] : rules) {
    out << "\n[" << au_name(au) << "]\ncenters =";
    for (const auto& c : centers) {
      out << ' ' << c.landmark << ':' << format_number(c.dx) << ':' << format_number(c.dy);
    }
    out << '\n';
  }
  return out.str();
}

// ---------------------------------------------------------------------------

Image::Image(int height, int width, float fill)
    : height_(height), width_(width),
      pixels_(static_cast<std::size_t>(height) * width * kChannels, fill) {
  require(height > 0 && width > 0, ErrorKind::Shape, "image dimensions must be positive");
}

Image::Image(int height, int width, std::vector<float> pixels)
    : height_(height), width_(width), pixels_(std::move(pixels)) {
  require(height > 0 && width > 0, ErrorKind::Shape, "image dimensions must be positive");
  require(pixels_.size() == static_cast<std::size_t>(height) * width * kChannels,
          ErrorKind::Shape, "image buffer does not match its dimensions");
}

AttentionMap::AttentionMap(Au au, int height, int width)
    : au_(au), height_(height), width_(width),
      weights_(static_cast<std::size_t>(height) * width, 0.0f) {
  require(height > 0 && width > 0, ErrorKind::Shape, "attention dimensions must be positive");
}

// ---------------------------------------------------------------------------

std::vector<Point> au_centers(const LandmarkSet& landmarks, const AURuleTable& rules, Au au,
                              ImageSize size) {
  require(size.height > 0 && size.width > 0, ErrorKind::Shape, "image size must be positive");
  require(!landmarks.empty(), ErrorKind::Data, "landmarks are missing");
  const auto& specs = rules.centers_for(au);
  const double scale = size.width / rules.reference_size;

  std::vector<Point> centers;
  centers.reserve(specs.size());
  for (const auto& spec : specs) {
    const Point& p = landmarks[static_cast<std::size_t>(spec.landmark)];
    if (!(p.x >= 0.0 && p.y >= 0.0 && p.x < size.width && p.y < size.height)) {
      fail(ErrorKind::Data, "landmark " + std::to_string(spec.landmark) + " used by " +
                                au_name(au) + " lies outside the image");
    }
    centers.push_back({std::clamp(p.x + spec.dx * scale, 0.0, size.width - 1.0),
                       std::clamp(p.y + spec.dy * scale, 0.0, size.height - 1.0)});
  }
  return centers;
}

AttentionMap attention_map(std::span<const Point> centers, const AURuleTable& rules,
                           ImageSize size, Au au) {
  require(!centers.empty(), ErrorKind::Geometry, "attention map needs at least one center");
  AttentionMap map(au, size.height, size.width);
  const double half = rules.patch_half_size;

  // Visit only the patch box around each center.
  for (const auto& c : centers) {
    const int y_lo = std::max(0, static_cast<int>(std::ceil(c.y - half)) - 1);
    const int y_hi = std::min(size.height - 1, static_cast<int>(std::floor(c.y + half)) + 1);
    const int x_lo = std::max(0, static_cast<int>(std::ceil(c.x - half)) - 1);
    const int x_hi = std::min(size.width - 1, static_cast<int>(std::floor(c.x + half)) + 1);
    for (int y = y_lo; y <= y_hi; ++y) {
      const double dy = std::abs(y - c.y);
      if (dy > half) continue;
      for (int x = x_lo; x <= x_hi; ++x) {
        const double dx = std::abs(x - c.x);
        if (dx > half) continue;
        const auto w = static_cast<float>(std::max(0.0, 1.0 - rules.decay_rate * (dx + dy)));
        float& cell = map.at(y, x);
        cell = std::max(cell, w);
      }
    }
  }
  return map;
}

Image extract_roi(const Image& source, const AttentionMap& attention) {
  check_same_size(source.size(), attention.size(), "extract_roi");
  Image roi(source.height(), source.width());
  for (int y = 0; y < source.height(); ++y) {
    for (int x = 0; x < source.width(); ++x) {
      const float a = attention.at(y, x);
      for (int c = 0; c < Image::kChannels; ++c) roi.at(y, x, c) = a * source.at(y, x, c);
    }
  }
  return roi;
}

std::vector<AttentionMap> normalize_overlap(std::vector<AttentionMap> maps) {
  if (maps.empty()) return maps;
  const ImageSize size = maps.front().size();
  for (const auto& m : maps) check_same_size(size, m.size(), "normalize_overlap");

  const std::size_t n = maps.front().weights().size();
  for (std::size_t p = 0; p < n; ++p) {
    float total = 0.0f;
    for (const auto& m : maps) total += m.weights()[p];
    if (total > 1.0f) {
      for (auto& m : maps) m.weights()[p] /= total;
    }
  }
  return maps;
}

Image composite(const Image& source, std::span<const Image> generated,
                std::span<const AttentionMap> attentions) {
  require(generated.size() == attentions.size(), ErrorKind::Contract,
          "composite: generated and attention lists differ in length");
  for (const auto& g : generated) check_same_size(source.size(), g.size(), "composite");
  for (const auto& a : attentions) check_same_size(source.size(), a.size(), "composite");

  Image out = source;
  for (int y = 0; y < source.height(); ++y) {
    for (int x = 0; x < source.width(); ++x) {
      float total = 0.0f;
      for (const auto& a : attentions) total += a.at(y, x);
      if (total > 1.0f + 1e-6f) {
        fail(ErrorKind::Contract, "composite: attention sum " + std::to_string(total) +
                                      " exceeds 1; normalize_overlap first");
      }
      if (total == 0.0f) continue;
      for (int c = 0; c < Image::kChannels; ++c) {
        float acc = 0.0f;
        for (std::size_t i = 0; i < attentions.size(); ++i) {
          if (attentions[i].at(y, x) > 0.0f) acc += generated[i].at(y, x, c);
        }
        out.at(y, x, c) = acc + (1.0f - total) * source.at(y, x, c);
      }
    }
  }
  return out;
}

Box support_box(const AttentionMap& attention) {
  Box box{attention.width(), attention.height(), -1, -1};
  for (int y = 0; y < attention.height(); ++y) {
    for (int x = 0; x < attention.width(); ++x) {
      if (attention.at(y, x) > 0.0f) {
        box.x0 = std::min(box.x0, x);
        box.y0 = std::min(box.y0, y);
        box.x1 = std::max(box.x1, x);
        box.y1 = std::max(box.y1, y);
      }
    }
  }
  if (box.x1 < 0) return Box{};
  return box;
}

std::vector<AttentionMap> au_attention_maps(const LandmarkSet& landmarks, const AURuleTable& rules,
                                            std::span<const Au> aus, ImageSize size) {
  std::vector<AttentionMap> maps;
  maps.reserve(aus.size());
  for (Au au : aus) {
    const auto centers = au_centers(landmarks, rules, au, size);
    maps.push_back(attention_map(centers, rules, size, au));
  }
  return normalize_overlap(std::move(maps));
}

}  // namespace lacgan
