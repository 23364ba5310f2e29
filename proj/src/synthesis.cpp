#include "lacgan/synthesis.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "lacgan/errors.hpp"
#include "lacgan/image_io.hpp"
#include "lacgan/tensors.hpp"
#include "lacgan/training.hpp"

namespace fs = std::filesystem;

namespace lacgan {

namespace {

std::string lower(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

std::string_view strip(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

}  // namespace

AuTargets parse_targets(std::string_view text) {
  AuTargets targets;
  while (!text.empty()) {
    const auto comma = text.find(',');
    const auto item = strip(text.substr(0, comma));
    text = comma == std::string_view::npos ? std::string_view{} : text.substr(comma + 1);
    if (item.empty()) continue;
    const auto eq = item.find('=');
    require(eq != std::string_view::npos, ErrorKind::Config,
            "target '" + std::string(item) + "' is not AU=state");
    const Au au = parse_au(strip(item.substr(0, eq)));
    const auto state = lower(strip(item.substr(eq + 1)));
    if (state == "present" || state == "1" || state == "on") {
      targets[au] = AuState::Present;
    } else if (state == "absent" || state == "0" || state == "off") {
      targets[au] = AuState::Absent;
    } else {
      fail(ErrorKind::Config, "unknown AU state '" + state + "'");
    }
  }
  return targets;
}

AuTargets targets_from_labels(const AuLabels& labels, const std::vector<Au>& aus) {
  AuTargets t;
  for (Au au : aus) {
    const auto l = labels[au_index(au)];
    if (l != AuLabel::Unknown) t[au] = l == AuLabel::Present ? AuState::Present : AuState::Absent;
  }
  return t;
}

Synthesizer::Synthesizer(std::shared_ptr<LacGanModel> model, AURuleTable rules,
                         nlohmann::json train_config)
    : model_(std::move(model)), rules_(std::move(rules)), train_config_(std::move(train_config)) {
  rules_.validate();
  model_->train(false);
}

Synthesizer Synthesizer::from_checkpoint(const std::string& path) {
  const auto ckpt = Checkpoint::read(path);
  auto model = std::make_shared<LacGanModel>(ckpt.model, 0);
  load_model_state(*model, ckpt);
  AURuleTable rules;
  try {
    rules = AURuleTable::from_ini(ckpt.rules_ini);
  } catch (const Error& e) {
    fail(ErrorKind::Load, std::string("checkpoint rule table: ") + e.what());
  }
  return Synthesizer(std::move(model), std::move(rules), ckpt.train_config);
}

SynthesisParts Synthesizer::parts(const Image& image, const LandmarkSet& landmarks,
                                  const AuTargets& targets) {
  const auto& cfg = model_->config();
  require(!landmarks.empty(), ErrorKind::Data, "synthesis needs landmarks");
  require(image.height() == cfg.image_size && image.width() == cfg.image_size, ErrorKind::Data,
          "input image is not " + std::to_string(cfg.image_size) + "x" +
              std::to_string(cfg.image_size));

  std::vector<Au> aus;
  for (Au au : cfg.aus) {
    if (targets.count(au)) aus.push_back(au);
  }
  for (const auto& [au, state] : targets) {
    require(std::find(aus.begin(), aus.end(), au) != aus.end(), ErrorKind::Config,
            au_name(au) + " has no trained generator in this checkpoint");
  }

  SynthesisParts out;
  out.attention = au_attention_maps(landmarks, rules_, aus, image.size());
  torch::NoGradGuard no_grad;
  model_->train(false);
  const auto source = to_tensor(image).unsqueeze(0);
  for (std::size_t i = 0; i < aus.size(); ++i) {
    const std::vector<RoiMapping> mapping{
        roi_mapping(support_box(out.attention[i]), image.size(), cfg.roi_size)};
    const auto weight = to_tensor(out.attention[i]).unsqueeze(0).unsqueeze(0);
    auto& carg = model_->carg(aus[i]);
    const auto roi = crop_windows(source * weight, mapping);
    const std::array<AuState, 1> state{targets.at(aus[i])};
    const auto window = decode(carg, encode(carg, roi), label_pairs(state));
    out.generated.push_back(to_image(paste_windows(window, mapping)));
  }
  out.output = composite(image, out.generated, out.attention);
  return out;
}

SourcePolicy parse_source_policy(std::string_view text) {
  const auto t = lower(text);
  if (t == "each" || t == "each-frame") return SourcePolicy::EachFrame;
  if (t == "neutral" || t == "neutral-frame") return SourcePolicy::NeutralFrame;
  fail(ErrorKind::Config, "unknown source policy '" + std::string(text) + "'");
}

DatasetManifest generate_augmentation_set(Synthesizer& synthesizer, const DatasetManifest& source,
                                          const std::string& out_dir,
                                          const AugmentOptions& options) {
  require(!source.rows.empty(), ErrorKind::Data, "augmentation source manifest is empty");
  const fs::path root(out_dir);
  fs::create_directories(root / "images");
  fs::create_directories(root / "landmarks");

  // Source row per output row.
  std::vector<std::size_t> from(source.rows.size());
  for (std::size_t i = 0; i < from.size(); ++i) from[i] = i;
  if (options.policy == SourcePolicy::NeutralFrame) {
    std::map<std::string, std::size_t> neutral;
    auto present = [&](std::size_t i) {
      return std::count(source.rows[i].labels.begin(), source.rows[i].labels.end(),
                        AuLabel::Present);
    };
    for (std::size_t i = 0; i < source.rows.size(); ++i) {
      auto [it, inserted] = neutral.emplace(source.rows[i].subject, i);
      if (!inserted && present(i) < present(it->second)) it->second = i;
    }
    for (std::size_t i = 0; i < from.size(); ++i) from[i] = neutral.at(source.rows[i].subject);
  }

  const LoadOptions load{options.align, synthesizer.config().image_size};
  DatasetManifest out{root.string(), {}};
  char name[32];
  for (std::size_t i = 0; i < source.rows.size(); ++i) {
    DatasetManifest one{source.root, {source.rows[from[i]]}};
    const auto sample = load_samples(one, load).front();
    const auto& row = source.rows[i];
    const auto targets = targets_from_labels(row.labels, synthesizer.config().aus);
    const auto image = synthesizer.synthesize(sample.image, sample.landmarks, targets);

    std::snprintf(name, sizeof(name), "A%06zu", i);
    ManifestRow synth;
    synth.image = std::string("images/") + name + ".png";
    synth.landmarks = std::string("landmarks/") + name + ".csv";
    synth.subject = row.subject;
    synth.labels = row.labels;
    write_image((root / synth.image).string(), image);
    write_landmarks((root / synth.landmarks).string(), sample.landmarks);
    out.rows.push_back(std::move(synth));
  }
  out.write();
  std::ofstream rules(root / "rules.ini");
  rules << synthesizer.rules().to_ini();
  return out;
}

}  // namespace lacgan
