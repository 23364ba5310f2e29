// End-to-end acceptance run: one PASS/FAIL line per criterion.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <iterator>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "lacgan/au_geometry.hpp"
#include "lacgan/dataset.hpp"
#include "lacgan/errors.hpp"
#include "lacgan/evaluation.hpp"
#include "lacgan/models.hpp"
#include "lacgan/objectives.hpp"
#include "lacgan/seeding.hpp"
#include "lacgan/synthesis.hpp"
#include "lacgan/training.hpp"
#include "support/fixtures.hpp"
#include "support/oracles.hpp"

using namespace lacgan;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

int failures = 0;

void report(int id, bool ok, const std::string& detail) {
  std::cout << "criterion " << id << ": " << (ok ? "PASS" : "FAIL") << "  " << detail << std::endl;
  if (!ok) ++failures;
}

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* pattern, double a, double b = 0.0, double c = 0.0) {
  char buf[256];
  std::snprintf(buf, sizeof(buf), pattern, a, b, c);
  return buf;
}

// --- 1 -------------------------------------------------------------------------

void attention_vs_reference() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(2024);
  const ImageSize size{32, 32};
  int mismatched = 0;
  for (int trial = 0; trial < 50; ++trial) {
    const auto table = testing::random_rule_table(rng, size.width);
    const auto lm = testing::random_landmarks(rng, size.width);
    for (Au au : kAllAus) {
      const auto centers = au_centers(lm, table, au, size);
      if (attention_map(centers, table, size, au).weights() !=
          testing::reference_attention(centers, table, size, au).weights()) {
        ++mismatched;
      }
    }
  }
  const double secs = seconds_since(t0);
  report(1, mismatched == 0 && secs < 5.0,
         fmt("50 random tables x 12 AUs at 32x32, %.0f mismatched maps, %.2f s", mismatched, secs));
}

// --- 2 -------------------------------------------------------------------------

void composite_limits() {
  std::mt19937_64 rng(77);
  int bad_zero = 0, bad_one = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const int h = 1 + static_cast<int>(rng() % 40), w = 1 + static_cast<int>(rng() % 40);
    Image src(h, w), gen(h, w);
    for (auto& v : src.pixels()) v = static_cast<float>(uniform(rng, -1, 1));
    for (auto& v : gen.pixels()) v = static_cast<float>(uniform(rng, -1, 1));
    const Au au = kAllAus[rng() % kNumAus];
    AttentionMap zero(au, h, w), one(au, h, w);
    std::fill(one.weights().begin(), one.weights().end(), 1.0f);
    const std::vector<Image> g{gen};
    if (!(composite(src, g, std::vector<AttentionMap>{zero}) == src)) ++bad_zero;
    if (!(composite(src, g, std::vector<AttentionMap>{one}) == gen)) ++bad_one;
  }
  report(2, bad_zero == 0 && bad_one == 0,
         fmt("100 random inputs, zero attention mismatches %.0f, unit attention mismatches %.0f",
             bad_zero, bad_one));
}

// --- 3 -------------------------------------------------------------------------

void loss_examples() {
  auto v = [](const torch::Tensor& t) { return t.item<double>(); };
  auto full = [](std::vector<long> shape, double x) {
    return torch::full(shape, x, torch::kFloat64);
  };
  struct Case {
    std::string name;
    double got, want;
  };
  std::vector<Case> cases;
  cases.push_back({"pixel", v(pixel_loss(full({1, 3, 2, 2}, 0.5), full({1, 3, 2, 2}, -0.5))), 1.0});
  const auto half = full({4}, 0.5);
  const auto lat = latent_adv_losses(half, half);
  cases.push_back({"adv_disc", v(lat.disc), -2.0 * std::log(0.5)});
  cases.push_back({"adv_gen", v(lat.gen), -std::log(0.5)});
  cases.push_back({"label", v(label_loss(torch::zeros({1, 2}, torch::kFloat64),
                                         torch::tensor({{-1.0, 1.0}}, torch::kFloat64))),
                   2.0});
  cases.push_back({"identity",
                   v(identity_loss({full({1, 2, 3, 3}, 1.0)}, {full({1, 2, 3, 3}, 0.0)}, {1.0})), 1.0});
  cases.push_back({"tv", v(tv_loss(torch::tensor({{0.0, 1.0}}, torch::kFloat64))), 1.0});
  const LossWeights w;
  cases.push_back({"carg", carg_objective(1.0, 1.0, 1.0, w), 1.11});
  const CargTerms one{Au::AU1, 1.0, 1.0, 1.0, 0.0, 0.0}, two{Au::AU12, 1.0, 1.0, 1.0, 0.0, 0.0};
  cases.push_back({"total", total_objective({one, two}, 1.0, 1.0, 0.0, w).total, 3.221});

  double worst = 0.0;
  std::string detail;
  for (const auto& c : cases) {
    worst = std::max(worst, std::abs(c.got - c.want));
    if (!detail.empty()) detail += ", ";
    detail += c.name + " " + fmt("%.6f", c.got);
  }
  report(3, worst <= 1e-6, detail + fmt("; max error %.2e", worst));
}

// --- 4 -------------------------------------------------------------------------

void gradient_suite() {
  const auto t0 = Clock::now();
  torch::manual_seed(3);
  const auto config = testing::tiny_config();
  double worst = 0.0;
  std::string where;
  auto note = [&](const testing::GradCheck& r, const std::string& tag) {
    if (r.max_rel_error > worst) {
      worst = r.max_rel_error;
      where = tag + ":" + r.worst;
    }
  };
  auto pairs = [](int n) {
    std::vector<AuState> s;
    for (int i = 0; i < n; ++i) s.push_back(i % 2 ? AuState::Present : AuState::Absent);
    return label_pairs(s, torch::kFloat64);
  };

  LacGanModel model(config, 4);
  model.to(torch::kFloat64);
  auto identity = PyramidIdentityExtractor::seeded(config.identity_widths, 5);
  identity->to(torch::kFloat64);

  {  // generator
    auto& carg = model.carg(Au::AU12);
    const auto roi = torch::rand({2, 3, 4, 4}, torch::kFloat64) * 2 - 1;
    const auto p = pairs(2);
    const auto weights = torch::rand({2, 3, 4, 4}, torch::kFloat64);
    auto f = [&] { return (decode(carg, encode(carg, roi), p) * weights).sum(); };
    auto tensors = testing::named(*carg.encoder, "encoder.");
    for (auto& t : testing::named(*carg.decoder, "decoder.")) tensors.push_back(t);
    note(testing::check_gradients(f, tensors), "generator");
  }
  {  // discriminators, train mode
    auto& carg = model.carg(Au::AU1);
    const auto roi = torch::rand({3, 3, 4, 4}, torch::kFloat64);
    const auto z = torch::rand({3, 6}, torch::kFloat64) * 2 - 1;
    const auto p = pairs(3);
    const auto img = torch::rand({3, 3, 8, 8}, torch::kFloat64);
    note(testing::check_gradients(
             [&] { return discriminate_local(carg, roi, p).log().sum() + regress_au(carg, roi).pow(2).sum(); },
             testing::named(*carg.local_disc, "local.")),
         "local");
    note(testing::check_gradients([&] { return discriminate_latent(carg, z).log().sum(); },
                                  testing::named(*carg.latent_disc, "latent.")),
         "latent");
    note(testing::check_gradients(
             [&] { return discriminate_global(model.global_disc(), img).log().sum(); },
             testing::named(*model.global_disc(), "global.")),
         "global");
  }
  {  // full generator objective
    auto& carg = model.carg(Au::AU1);
    carg.local_disc->eval();
    const auto roi = torch::rand({3, 3, 4, 4}, torch::kFloat64) * 2 - 1;
    const auto face = torch::rand({3, 3, 8, 8}, torch::kFloat64) * 2 - 1;
    const auto target = pairs(3);
    const auto prior = torch::rand({3, 6}, torch::kFloat64) * 2 - 1;
    const LossWeights w;
    auto f = [&] {
      const auto z = encode(carg, roi);
      const auto recon = decode(carg, z, target);
      const auto adv_z = latent_adv_losses(discriminate_latent(carg, prior), discriminate_latent(carg, z));
      const auto local = local_adv_and_label_loss(discriminate_local(carg, roi, target),
                                                  discriminate_local(carg, recon, target),
                                                  regress_au(carg, recon), target);
      const auto carg_loss =
          carg_objective(pixel_loss(recon, roi), adv_z.gen, local.gen + w.lambda_au * local.label, w);
      auto edited = face.clone();
      using torch::indexing::Slice;
      edited.index_put_({Slice(), Slice(), Slice(2, 6), Slice(2, 6)}, recon);
      const auto id = identity_loss(identity_features(*identity, edited),
                                    identity_features(*identity, face), w.alpha);
      const auto img = global_adv_loss(discriminate_global(model.global_disc(), face),
                                       discriminate_global(model.global_disc(), edited));
      return carg_loss + w.lambda3 * id + w.lambda4 * tv_loss(edited) + w.lambda_img * img.gen;
    };
    auto tensors = testing::named(*carg.encoder, "encoder.");
    for (auto& t : testing::named(*carg.decoder, "decoder.")) tensors.push_back(t);
    note(testing::check_gradients(f, tensors), "total");
    carg.local_disc->train();
  }
  const double secs = seconds_since(t0);
  report(4, worst < 1e-4 && secs < 120.0,
         fmt("float64, h=1e-5, max relative error %.2e, %.1f s", worst, secs) +
             (where.empty() ? "" : " (worst " + where + ")"));
}

// --- 5 -------------------------------------------------------------------------

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const auto n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

void toy_end_to_end(const DatasetManifest& toy, const std::string& work) {
  auto config = TrainConfig::load(std::string(LACGAN_SOURCE_DIR) + "/configs/toy_train.json");
  const auto rules = config.resolve_rules();
  const auto aus = config.model.aus;
  auto samples = load_samples(toy, LoadOptions{false, config.model.image_size});
  const bool shape_ok = aus.size() == 4 && samples.size() == 2000 && config.model.roi_size == 16 &&
                        config.max_steps <= 2000;

  const auto t0 = Clock::now();
  Trainer trainer(config, samples, rules);
  std::vector<double> losses;
  while (trainer.step() < config.max_steps) losses.push_back(trainer.train_step().generator);
  const double train_secs = seconds_since(t0);
  trainer.save(work + "/toy.ckpt");

  auto synth = Synthesizer::from_checkpoint(work + "/toy.ckpt");

  // (a) flipping one AU changes nothing outside that AU's support.
  int outside = 0, unchanged = 0, toggles = 0;
  for (std::size_t i = 0; i < samples.size(); i += 100) {
    const auto& s = samples[i];
    for (Au au : aus) {
      const auto maps = au_attention_maps(s.landmarks, rules, std::vector<Au>{au},
                                          {s.image.height(), s.image.width()});
      const auto on = synth.synthesize(s.image, s.landmarks, {{au, AuState::Present}});
      const auto off = synth.synthesize(s.image, s.landmarks, {{au, AuState::Absent}});
      bool changed = false;
      for (int y = 0; y < s.image.height(); ++y) {
        for (int x = 0; x < s.image.width(); ++x) {
          for (int c = 0; c < 3; ++c) {
            const bool differs = on.at(y, x, c) != off.at(y, x, c) ||
                                 on.at(y, x, c) != s.image.at(y, x, c);
            if (differs && maps[0].at(y, x) == 0.0f) ++outside;
            changed = changed || on.at(y, x, c) != off.at(y, x, c);
          }
        }
      }
      ++toggles;
      if (!changed) ++unchanged;
    }
  }
  const bool a_ok = outside == 0 && unchanged == 0;

  // (b) augmentation set with random targets, scored by the toy oracle.
  DatasetManifest request{toy.root, {}};
  for (std::size_t i = 0; i < toy.rows.size(); i += 5) {
    auto row = toy.rows[i];
    std::mt19937_64 rng(derive_seed(99, {i}));
    for (Au au : aus) {
      row.labels[au_index(au)] = (rng() >> 63) ? AuLabel::Present : AuLabel::Absent;
    }
    request.rows.push_back(row);
  }
  const auto aug = generate_augmentation_set(synth, request, work + "/aug");
  ToyOracleDetector oracle(rules, aus);
  const auto pred = oracle.predict(aug);
  double min_f1 = 100.0;
  std::string per_au;
  for (Au au : aus) {
    std::vector<Prediction> p;
    std::vector<AuLabel> t;
    for (std::size_t i = 0; i < aug.rows.size(); ++i) {
      p.push_back(pred[i][au_index(au)]);
      t.push_back(aug.rows[i].labels[au_index(au)]);
    }
    const double f1 = round1(f1_accuracy(p, t).f1);
    min_f1 = std::min(min_f1, f1);
    per_au += " " + au_name(au) + "=" + fmt("%.1f", f1);
  }
  const bool b_ok = min_f1 >= 90.0;

  // (c) loss trend.
  const std::size_t tenth = std::max<std::size_t>(1, losses.size() / 10);
  const double early = median(std::vector<double>(losses.begin(), losses.begin() + tenth));
  const double late = median(std::vector<double>(losses.end() - tenth, losses.end()));
  const bool c_ok = late < early;

  const bool time_ok = train_secs <= 15 * 60;
  std::ostringstream detail;
  detail << "4 AUs, " << samples.size() << " samples, 16x16 ROIs, " << losses.size() << " steps in "
         << fmt("%.0f s", train_secs) << "; (a) " << toggles << " toggles, " << outside
         << " changed pixels outside support, " << unchanged << " without effect; (b) "
         << aug.rows.size() << " images, F1" << per_au << "; (c) median generator loss "
         << fmt("%.4f -> %.4f", early, late);
  report(5, shape_ok && time_ok && a_ok && b_ok && c_ok, detail.str());
}

// --- 6 -------------------------------------------------------------------------

void gap_example() {
  // Smallest confusion matrix whose rounded F1 hits each value.
  auto counts_for = [](double f1) {
    for (int total = 1; total < 400; ++total) {
      for (int tp = 1; tp <= total; ++tp) {
        for (int err = 0; tp + err <= total; ++err) {
          const Confusion c{tp, err / 2, err - err / 2, total - tp - err};
          if (round1(f1_accuracy(c).f1) == f1) return c;
        }
      }
    }
    fail(ErrorKind::Metric, "no confusion matrix found");
  };
  const auto real = counts_for(64.1), synth = counts_for(75.8);
  auto detector = CsvDetector::openface();
  const auto supported = detector->supported();
  auto rows_for = [&](const Confusion& c, std::vector<PredictionRow>& pred,
                      std::vector<AuLabels>& truth) {
    auto add = [&](std::int64_t n, Prediction p, AuLabel t) {
      for (std::int64_t i = 0; i < n; ++i) {
        PredictionRow r;
        r.fill(Prediction::Unsupported);
        AuLabels l;
        l.fill(AuLabel::Unknown);
        for (Au au : supported) {
          r[au_index(au)] = p;
          l[au_index(au)] = t;
        }
        pred.push_back(r);
        truth.push_back(l);
      }
    };
    add(c.tp, Prediction::Present, AuLabel::Present);
    add(c.fp, Prediction::Present, AuLabel::Absent);
    add(c.fn, Prediction::Absent, AuLabel::Present);
    add(c.tn, Prediction::Absent, AuLabel::Absent);
  };
  std::vector<PredictionRow> rp, sp;
  std::vector<AuLabels> rt, st;
  rows_for(real, rp, rt);
  rows_for(synth, sp, st);
  const auto r = build_report(detector->name(), supported, rp, rt, sp, st);
  const auto& au1 = r.rows[au_index(Au::AU1)];
  const auto& au24 = r.rows[au_index(Au::AU24)];
  const auto text = r.to_text();
  std::string au24_line;
  std::istringstream lines(text);
  for (std::string line; std::getline(lines, line);) {
    if (line.rfind("AU24", 0) == 0) au24_line = line;
  }
  const bool dash = !au24.supported && au24_line.find('-') != std::string::npos &&
                    au24_line.find('.') == std::string::npos &&
                    r.to_json()["rows"][au_index(Au::AU24)]["supported"] == false;
  const bool ok = au1.f1_real == 64.1 && au1.f1_synth == 75.8 && au1.gap_f1 == -11.7 &&
                  r.average.gap_f1 == -11.7 && dash;
  report(6, ok,
         fmt("Real F1 %.1f, Synth F1 %.1f, Gap %.1f", au1.f1_real, au1.f1_synth, au1.gap_f1) +
             "; AU24 unsupported row: \"" + au24_line + "\"");
}

// --- 7 -------------------------------------------------------------------------

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

bool same_tree(const fs::path& a, const fs::path& b, std::size_t& files) {
  std::vector<fs::path> left, right;
  for (const auto& e : fs::recursive_directory_iterator(a)) {
    if (e.is_regular_file()) left.push_back(fs::relative(e.path(), a));
  }
  for (const auto& e : fs::recursive_directory_iterator(b)) {
    if (e.is_regular_file()) right.push_back(fs::relative(e.path(), b));
  }
  std::sort(left.begin(), left.end());
  std::sort(right.begin(), right.end());
  files = left.size();
  if (left != right || left.empty()) return false;
  for (const auto& p : left) {
    if (slurp(a / p) != slurp(b / p)) return false;
  }
  return true;
}

void resume_and_reproducibility(const DatasetManifest& toy, const std::string& work) {
  auto config = TrainConfig::load(std::string(LACGAN_SOURCE_DIR) + "/configs/toy_train.json");
  const auto rules = config.resolve_rules();
  const auto samples = load_samples(toy, LoadOptions{false, config.model.image_size});

  Trainer straight(config, samples, rules);
  std::vector<LossReport> reference;
  for (int s = 0; s < 51; ++s) reference.push_back(straight.train_step());

  Trainer first(config, samples, rules);
  bool prefix_ok = true;
  for (int s = 0; s < 50; ++s) prefix_ok = prefix_ok && first.train_step() == reference[s];
  first.save(work + "/step50.ckpt");
  Trainer resumed(config, samples, rules);
  resumed.load(work + "/step50.ckpt");
  const auto r51 = resumed.train_step();
  const bool resume_ok = prefix_ok && r51 == reference[50];

  ToyDatasetOptions o;
  o.subjects = 3;
  o.per_subject = 40;
  generate_toy_dataset(o, work + "/toy_a");
  generate_toy_dataset(o, work + "/toy_b");
  std::size_t files = 0;
  const bool toy_ok = same_tree(work + "/toy_a", work + "/toy_b", files);

  report(7, resume_ok && toy_ok,
         fmt("step 51 after resume: generator %.9f vs %.9f", r51.generator, reference[50].generator) +
             (resume_ok ? " (reports identical)" : " (reports differ)") + "; toy generation " +
             std::to_string(files) + " files " + (toy_ok ? "byte-identical" : "differ"));
}

}  // namespace

int main() {
  torch::set_num_threads(1);
  testing::TempDir work("acceptance");
  auto guarded = [](int id, const std::function<void()>& f) {
    try {
      f();
    } catch (const std::exception& e) {
      report(id, false, std::string("error: ") + e.what());
    }
  };
  guarded(1, attention_vs_reference);
  guarded(2, composite_limits);
  guarded(3, loss_examples);
  guarded(4, gradient_suite);

  DatasetManifest toy;
  try {
    toy = generate_toy_dataset(ToyDatasetOptions{}, work.str("toy"));
  } catch (const std::exception& e) {
    report(5, false, std::string("toy data: ") + e.what());
    guarded(6, gap_example);
    report(7, false, std::string("toy data: ") + e.what());
    return 1;
  }
  guarded(5, [&] { toy_end_to_end(toy, work.str()); });
  guarded(6, gap_example);
  guarded(7, [&] { resume_and_reproducibility(toy, work.str()); });
  std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " failed")
            << std::endl;
  return failures == 0 ? 0 : 1;
}
