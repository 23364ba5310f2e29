#include "support/test.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>
#include <set>
#include <sstream>

#include "lacgan/dataset.hpp"
#include "lacgan/errors.hpp"
#include "lacgan/image_io.hpp"
#include "support/fixtures.hpp"

using namespace lacgan;
using lacgan::testing::TempDir;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

void write_text(const fs::path& p, const std::string& text) {
  fs::create_directories(p.parent_path());
  std::ofstream(p, std::ios::binary) << text;
}

std::string header() {
  std::string h = "image,landmarks,subject";
  for (Au au : kAllAus) h += "," + au_name(au);
  return h + "\n";
}

ManifestRow row(const std::string& name, const std::string& subject) {
  ManifestRow r;
  r.image = "images/" + name + ".png";
  r.landmarks = "landmarks/" + name + ".csv";
  r.subject = subject;
  r.labels.fill(AuLabel::Absent);
  return r;
}

}  // namespace

TEST_CASE("intensity codes binarize with 9 as unknown") {
  CHECK(binarize_intensity(0) == AuLabel::Absent);
  CHECK(binarize_intensity(1) == AuLabel::Present);
  CHECK(binarize_intensity(5) == AuLabel::Present);
  CHECK(binarize_intensity(9) == AuLabel::Unknown);
  CHECK(binarize_intensity(-1) == AuLabel::Unknown);
  CHECK(binarize_intensity(1, 2) == AuLabel::Absent);
  CHECK(binarize_intensity(2, 2) == AuLabel::Present);
}

TEST_CASE("manifest reads labels and writes them back") {
  TempDir dir("manifest");
  std::string text = header();
  text += "images/a.png,landmarks/a.csv,F001,1,0,9,3,0,0,0,0,0,0,0,1\n";
  text += "images/b.png,landmarks/b.csv,M002,0,0,0,0,0,0,,0,0,0,0,0\n";
  write_text(dir.path() / "manifest.csv", text);

  const auto m = DatasetManifest::read(dir.str("manifest.csv"));
  REQUIRE(m.rows.size() == 2);
  CHECK(m.rows[0].labels[au_index(Au::AU1)] == AuLabel::Present);
  CHECK(m.rows[0].labels[au_index(Au::AU4)] == AuLabel::Unknown);
  CHECK(m.rows[0].labels[au_index(Au::AU6)] == AuLabel::Present);
  CHECK(m.rows[0].labels[au_index(Au::AU24)] == AuLabel::Present);
  CHECK(m.rows[1].labels[au_index(Au::AU12)] == AuLabel::Unknown);
  CHECK((m.subjects() == std::vector<std::string>{"F001", "M002"}));

  const auto strict = DatasetManifest::read(dir.str("manifest.csv"), 2);
  CHECK(strict.rows[0].labels[au_index(Au::AU1)] == AuLabel::Absent);
  CHECK(strict.rows[0].labels[au_index(Au::AU6)] == AuLabel::Present);

  DatasetManifest copy{dir.str("out"), m.rows};
  copy.write();
  CHECK((DatasetManifest::read(copy.path()).rows == m.rows));
}

TEST_CASE("manifest errors are data errors") {
  TempDir dir("manifest_bad");
  auto kind_of = [&](const std::string& text) {
    write_text(dir.path() / "m.csv", text);
    try {
      DatasetManifest::read(dir.str("m.csv"));
    } catch (const Error& e) {
      return e.kind();
    }
    return ErrorKind::Io;
  };
  CHECK(kind_of("") == ErrorKind::Data);
  CHECK(kind_of("image,landmarks\n") == ErrorKind::Data);
  CHECK(kind_of(header() + "a.png,a.csv,S\n") == ErrorKind::Data);
  CHECK(kind_of(header() + "a.png,a.csv,S,x,0,0,0,0,0,0,0,0,0,0,0\n") == ErrorKind::Data);
  try {
    DatasetManifest::read(dir.str("missing.csv"));
    FAIL("expected a data error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Data);
  }
}

TEST_CASE("check_files names the missing file") {
  TempDir dir("check_files");
  DatasetManifest m{dir.str(), {row("a", "S1")}};
  try {
    m.check_files();
    FAIL("expected a data error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Data);
    CHECK(std::string(e.what()).find("images/a.png") != std::string::npos);
  }
}

TEST_CASE("write_as rebases paths to the new location") {
  TempDir dir("write_as");
  DatasetManifest m{dir.str("data"), {row("a", "S1")}};
  m.write_as(dir.str("splits/train.csv"));
  const auto back = DatasetManifest::read(dir.str("splits/train.csv"));
  REQUIRE(back.rows.size() == 1);
  CHECK(back.rows[0].image == "../data/images/a.png");
  CHECK(fs::weakly_canonical(fs::path(back.root) / back.rows[0].image) ==
        fs::weakly_canonical(dir.path() / "data/images/a.png"));
}

TEST_CASE("subject split is disjoint, exhaustive and ordered") {
  DatasetManifest m;
  for (int s = 0; s < 10; ++s) {
    for (int k = 0; k < 3; ++k) m.rows.push_back(row("r" + std::to_string(s * 3 + k), "S" + std::to_string(s)));
  }
  std::set<std::string> seen_test;
  std::size_t total_test = 0;
  for (int fold = 0; fold < 3; ++fold) {
    const auto [train, test] = split_subjects(m, {3, fold});
    CHECK(train.rows.size() + test.rows.size() == m.rows.size());
    const auto a = train.subjects(), b = test.subjects();
    for (const auto& s : b) {
      CHECK(std::find(a.begin(), a.end(), s) == a.end());
      CHECK(seen_test.insert(s).second);
    }
    total_test += b.size();
  }
  CHECK(total_test == 10);
  // Sorted subjects S0, S1, S2, S3 land in fold 0 of 3.
  const auto first = split_subjects(m, {3, 0}).second.subjects();
  CHECK((first == std::vector<std::string>{"S0", "S1", "S2", "S3"}));
}

TEST_CASE("split rejects bad fold specs") {
  DatasetManifest m{".", {row("a", "S1"), row("b", "S2")}};
  CHECK_THROWS_AS(split_subjects(m, {1, 0}), Error);
  CHECK_THROWS_AS(split_subjects(m, {2, 2}), Error);
  CHECK_THROWS_AS(split_subjects(m, {3, 0}), Error);
  DatasetManifest one{".", {row("a", "S1"), row("b", "S1")}};
  CHECK_THROWS_AS(split_subjects(one, {2, 0}), Error);
}

TEST_CASE("similarity fit recovers a known transform") {
  const double scale = 1.7, theta = 0.3;
  const Similarity truth{scale * std::cos(theta), scale * std::sin(theta), 5.0, -2.0};
  std::vector<Point> from{{0, 0}, {10, 0}, {3, 7}, {-4, 2}};
  std::vector<Point> to;
  for (const auto& p : from) to.push_back(truth.apply(p));
  const auto s = fit_similarity(from, to);
  CHECK(s.scale() == doctest::Approx(scale).epsilon(1e-9));
  CHECK(s.rotation() == doctest::Approx(theta).epsilon(1e-9));
  CHECK(s.tx == doctest::Approx(5.0).epsilon(1e-9));
  CHECK(s.ty == doctest::Approx(-2.0).epsilon(1e-9));
  CHECK_THROWS_AS(fit_similarity({{1, 1}, {1, 1}}, {{0, 0}, {1, 1}}), Error);
}

TEST_CASE("alignment maps a moved face back onto the template") {
  const int size = 64;
  const auto canon = canonical_landmarks(size);
  const Similarity move{0.8 * std::cos(0.2), 0.8 * std::sin(0.2), 12.0, 4.0};
  std::vector<Point> moved;
  for (const auto& p : canon.points()) moved.push_back(move.apply(p));
  const auto aligned = align_face(Image(size, size, 0.1f), LandmarkSet(moved), size);
  for (std::size_t i = 0; i < LandmarkSet::kCount; ++i) {
    CHECK(aligned.landmarks[i].x == doctest::Approx(canon[i].x).epsilon(1e-6));
    CHECK(aligned.landmarks[i].y == doctest::Approx(canon[i].y).epsilon(1e-6));
  }
  CHECK(aligned.image.at(10, 10, 0) == doctest::Approx(0.1f));
}

TEST_CASE("alignment rejects collinear anchors") {
  std::vector<Point> flat(68, Point{10.0, 20.0});
  for (int k = 0; k < 6; ++k) {
    flat[36 + k] = {10.0, 20.0};
    flat[42 + k] = {30.0, 20.0};
  }
  flat[30] = {50.0, 20.0};
  try {
    align_face(Image(64, 64), LandmarkSet(flat), 64);
    FAIL("expected an alignment error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Alignment);
  }
}

TEST_CASE("canonical landmarks place the eyes as documented") {
  const auto anchors = alignment_anchors(canonical_landmarks(200));
  CHECK(anchors[0].y == doctest::Approx(76.0));
  CHECK(anchors[1].y == doctest::Approx(76.0));
  CHECK(anchors[1].x - anchors[0].x == doctest::Approx(90.0));
}

TEST_CASE("PNG round trip equals 8-bit quantization") {
  TempDir dir("png");
  std::mt19937_64 rng(9);
  Image img(5, 7);
  for (auto& v : img.pixels()) v = static_cast<float>(uniform(rng, -1.2, 1.2));
  write_image(dir.str("x.png"), img);
  const auto back = read_image(dir.str("x.png"));
  REQUIRE(back.size() == img.size());
  for (std::size_t i = 0; i < img.pixels().size(); ++i) {
    REQUIRE(back.pixels()[i] == quantize_pixel(img.pixels()[i]));
  }
  CHECK_THROWS_AS(read_image(dir.str("nope.png")), Error);
}

TEST_CASE("landmark files round trip") {
  TempDir dir("lm");
  const auto lm = canonical_landmarks(64);
  write_landmarks(dir.str("a.csv"), lm);
  const auto back = read_landmarks(dir.str("a.csv"));
  for (std::size_t i = 0; i < 68; ++i) {
    CHECK(back[i].x == doctest::Approx(lm[i].x).epsilon(1e-9));
    CHECK(back[i].y == doctest::Approx(lm[i].y).epsilon(1e-9));
  }
  write_text(dir.path() / "short.csv", "1,2\n3,4\n");
  CHECK_THROWS_AS(read_landmarks(dir.str("short.csv")), Error);
}

TEST_CASE("toy generation is byte-identical for a fixed seed") {
  TempDir a("toy_a"), b("toy_b");
  ToyDatasetOptions o;
  o.seed = 42;
  o.subjects = 3;
  o.per_subject = 4;
  o.size = 32;
  o.active_aus = 2;
  const auto ma = generate_toy_dataset(o, a.str());
  generate_toy_dataset(o, b.str());
  REQUIRE(ma.rows.size() == 12);
  for (const auto& entry : fs::recursive_directory_iterator(a.path())) {
    if (!entry.is_regular_file()) continue;
    const auto rel = fs::relative(entry.path(), a.path());
    REQUIRE(slurp(entry.path()) == slurp(b.path() / rel));
  }
  ma.check_files();

  const auto meta = read_toy_metadata(a.str());
  REQUIRE(meta.has_value());
  CHECK((meta->aus == toy_aus(2)));
  CHECK(meta->size == 32);
  // AUs outside the active set are labelled absent.
  for (const auto& r : ma.rows) {
    for (Au au : kAllAus) {
      if (std::find(meta->aus.begin(), meta->aus.end(), au) == meta->aus.end()) {
        CHECK(r.labels[au_index(au)] == AuLabel::Absent);
      }
    }
  }

  o.seed = 43;
  TempDir c("toy_c");
  generate_toy_dataset(o, c.str());
  CHECK(slurp(a.path() / "manifest.csv") != slurp(c.path() / "manifest.csv"));
}

TEST_CASE("toy faces differ only inside the active AU patch") {
  const auto rules = AURuleTable::toy_default();
  const auto params = toy_subject_params(1, 0);
  const std::vector<Au> aus{Au::AU1, Au::AU12};
  const auto off = render_toy_face(params, 0.0, 64, rules, aus, {false, false});
  const auto on = render_toy_face(params, 0.0, 64, rules, aus, {false, true});
  const auto maps = au_attention_maps(canonical_landmarks(64), rules, aus, {64, 64});
  int changed = 0;
  for (int y = 0; y < 64; ++y) {
    for (int x = 0; x < 64; ++x) {
      if (off.at(y, x, 0) != on.at(y, x, 0)) {
        ++changed;
        REQUIRE(maps[1].at(y, x) > 0.0f);
      }
    }
  }
  CHECK(changed > 0);
  CHECK(toy_aus(4).size() == 4);
  CHECK_THROWS_AS(toy_aus(13), Error);
}

TEST_CASE("load_samples enforces the configured size") {
  TempDir dir("load");
  ToyDatasetOptions o;
  o.subjects = 2;
  o.per_subject = 2;
  o.size = 32;
  const auto m = generate_toy_dataset(o, dir.str());
  CHECK(load_samples(m, {false, 32}).size() == 4);
  try {
    load_samples(m, {false, 64});
    FAIL("expected a data error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Data);
  }
  const auto aligned = load_samples(m, {true, 48});
  CHECK(aligned[0].image.height() == 48);
}
