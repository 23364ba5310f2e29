// lacgan: dataset preparation, training, synthesis and evaluation.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "lacgan/dataset.hpp"
#include "lacgan/errors.hpp"
#include "lacgan/evaluation.hpp"
#include "lacgan/image_io.hpp"
#include "lacgan/synthesis.hpp"
#include "lacgan/training.hpp"

namespace fs = std::filesystem;
using namespace lacgan;

namespace {

AURuleTable rules_from(const std::string& spec) {
  if (spec == "default") return AURuleTable::face_default();
  if (spec == "toy") return AURuleTable::toy_default();
  return AURuleTable::load(spec);
}

int run_make_toy(const ToyDatasetOptions& options, const std::string& out) {
  const auto manifest = generate_toy_dataset(options, out);
  std::cout << "wrote " << manifest.rows.size() << " samples to " << manifest.path() << '\n';
  return 0;
}

int run_split(const std::string& manifest_path, const std::string& train_out,
              const std::string& test_out, const FoldSpec& spec) {
  const auto manifest = DatasetManifest::read(manifest_path);
  const auto [train, test] = split_subjects(manifest, spec);
  train.write_as(train_out);
  test.write_as(test_out);
  std::cout << "train " << train.rows.size() << " rows -> " << train_out << '\n'
            << "test " << test.rows.size() << " rows -> " << test_out << '\n';
  return 0;
}

int run_train(const std::string& config_path, const std::string& data, const std::string& out,
              const std::string& resume, std::int64_t max_steps) {
  apply_determinism_from_env();
  auto config = TrainConfig::load(config_path);
  if (max_steps >= 0) config.max_steps = max_steps;
  const auto manifest = DatasetManifest::read(data, config.presence_threshold);
  auto samples = load_samples(manifest, {config.align, config.model.image_size});
  Trainer trainer(config, std::move(samples), config.resolve_rules());
  if (!resume.empty()) trainer.load(resume);
  const auto last = trainer.fit(out, &std::cout);
  std::cout << "checkpoint " << last << '\n';
  return 0;
}

int run_synthesize(const std::string& ckpt, const std::string& image_path,
                   const std::string& landmarks_path, const std::string& set,
                   const std::string& out, bool align) {
  auto synth = Synthesizer::from_checkpoint(ckpt);
  auto image = read_image(image_path);
  auto landmarks = read_landmarks(landmarks_path);
  if (align || synth.train_config().value("align", false)) {
    auto aligned = align_face(image, landmarks, synth.config().image_size);
    image = std::move(aligned.image);
    landmarks = std::move(aligned.landmarks);
  }
  write_image(out, synth.synthesize(image, landmarks, parse_targets(set)));
  std::cout << "wrote " << out << '\n';
  return 0;
}

int run_augment(const std::string& ckpt, const std::string& manifest_path, const std::string& out,
                const std::string& source) {
  auto synth = Synthesizer::from_checkpoint(ckpt);
  const int threshold = synth.train_config().value("presence_threshold", 1);
  const auto manifest = DatasetManifest::read(manifest_path, threshold);
  AugmentOptions options;
  options.policy = parse_source_policy(source);
  options.align = synth.train_config().value("align", false);
  const auto result = generate_augmentation_set(synth, manifest, out, options);
  // Carry the toy description along so the toy detector can read either set.
  const fs::path toy = fs::path(manifest.root) / "toy.json";
  if (fs::exists(toy)) fs::copy_file(toy, fs::path(out) / "toy.json", fs::copy_options::overwrite_existing);
  std::cout << "wrote " << result.rows.size() << " samples to " << result.path() << '\n';
  return 0;
}

int run_evaluate(const std::string& detector_name, const std::string& real_path,
                 const std::string& synth_path, const std::string& report_path) {
  const auto real = DatasetManifest::read(real_path);
  const auto synth = DatasetManifest::read(synth_path);
  auto detector = make_detector(detector_name, real.root);
  const auto report = gap_report(*detector, real, synth);
  const auto text = report.to_text();
  std::cout << text;
  if (!report_path.empty()) {
    std::ofstream out(report_path);
    require(out.good(), ErrorKind::Io, "cannot write report '" + report_path + "'");
    out << text;
    std::ofstream json(report_path + ".json");
    json << report.to_json().dump(2) << '\n';
  }
  return 0;
}

int run_attention(const std::string& landmarks_path, const std::string& rules_spec, int size,
                  const std::string& out) {
  const auto landmarks = read_landmarks(landmarks_path);
  const auto rules = rules_from(rules_spec);
  fs::create_directories(out);
  const auto maps = au_attention_maps(landmarks, rules, kAllAus, {size, size});
  for (const auto& m : maps) {
    write_attention((fs::path(out) / (au_name(m.au()) + ".png")).string(), m);
  }
  std::cout << "wrote " << maps.size() << " attention maps to " << out << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Local attentive AU synthesis: data, training, editing and evaluation"};
  app.require_subcommand(1);

  ToyDatasetOptions toy;
  std::string toy_out;
  auto* make_toy = app.add_subcommand("make-toy-data", "Generate the procedural toy dataset");
  make_toy->add_option("--out", toy_out, "Output directory")->required();
  make_toy->add_option("--seed", toy.seed, "Seed");
  make_toy->add_option("--subjects", toy.subjects, "Number of subjects");
  make_toy->add_option("--per-subject", toy.per_subject, "Samples per subject");
  make_toy->add_option("--size", toy.size, "Image size in pixels");
  make_toy->add_option("--aus", toy.active_aus, "Number of active AUs (1-12)");

  std::string split_manifest, split_train, split_test;
  FoldSpec folds;
  auto* split = app.add_subcommand("split", "Subject-disjoint train/test split");
  split->add_option("--manifest", split_manifest, "Input manifest")->required();
  split->add_option("--train-out", split_train, "Train manifest file")->required();
  split->add_option("--test-out", split_test, "Test manifest file")->required();
  split->add_option("--folds", folds.folds, "Number of subject folds");
  split->add_option("--test-fold", folds.test_fold, "Fold used for testing");

  std::string config_path, data, train_out, resume;
  std::int64_t max_steps = -1;
  auto* train = app.add_subcommand("train", "Train all regional generators");
  train->add_option("--config", config_path, "Training config (JSON)")->required();
  train->add_option("--data", data, "Manifest file or dataset directory")->required();
  train->add_option("--out", train_out, "Output directory")->required();
  train->add_option("--resume", resume, "Checkpoint to resume from");
  train->add_option("--max-steps", max_steps, "Override max_steps");

  std::string ckpt, image, landmarks, set, synth_out;
  bool align = false;
  auto* synthesize = app.add_subcommand("synthesize", "Edit AUs of one face");
  synthesize->add_option("--ckpt", ckpt, "Checkpoint")->required();
  synthesize->add_option("--image", image, "Input image")->required();
  synthesize->add_option("--landmarks", landmarks, "68-point landmark CSV")->required();
  synthesize->add_option("--set", set, "Targets, e.g. AU12=present,AU4=absent")->required();
  synthesize->add_option("--out", synth_out, "Output PNG")->required();
  synthesize->add_flag("--align", align, "Align the face before editing");

  std::string aug_ckpt, aug_manifest, aug_out, source = "each";
  auto* augment = app.add_subcommand("augment", "Synthesize a label-matched copy of a dataset");
  augment->add_option("--ckpt", aug_ckpt, "Checkpoint")->required();
  augment->add_option("--manifest", aug_manifest, "Source manifest")->required();
  augment->add_option("--out", aug_out, "Output directory")->required();
  augment->add_option("--source", source, "Source frame policy: each or neutral");

  std::string detector, real, synth, report;
  auto* evaluate = app.add_subcommand("evaluate", "Detector gap report, real versus synthetic");
  evaluate->add_option("--detector", detector, "toy-oracle, openface or jaanet")->required();
  evaluate->add_option("--real", real, "Real manifest")->required();
  evaluate->add_option("--synth", synth, "Synthetic manifest")->required();
  evaluate->add_option("--report", report, "Text report path (JSON goes to <path>.json)");

  std::string att_landmarks, att_rules = "default", att_out;
  int att_size = 200;
  auto* attention = app.add_subcommand("attention", "Export attention maps as grayscale PNGs");
  attention->add_option("--landmarks", att_landmarks, "68-point landmark CSV")->required();
  attention->add_option("--rules", att_rules, "default, toy or a rule file");
  attention->add_option("--size", att_size, "Image size");
  attention->add_option("--out", att_out, "Output directory")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*make_toy) return run_make_toy(toy, toy_out);
    if (*split) return run_split(split_manifest, split_train, split_test, folds);
    if (*train) return run_train(config_path, data, train_out, resume, max_steps);
    if (*synthesize) return run_synthesize(ckpt, image, landmarks, set, synth_out, align);
    if (*augment) return run_augment(aug_ckpt, aug_manifest, aug_out, source);
    if (*evaluate) return run_evaluate(detector, real, synth, report);
    if (*attention) return run_attention(att_landmarks, att_rules, att_size, att_out);
  } catch (const Error& e) {
    std::cerr << "error (" << to_string(e.kind()) << "): " << e.what() << '\n';
    return exit_code(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}
