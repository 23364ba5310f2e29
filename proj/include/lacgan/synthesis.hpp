#pragma once

// Editing faces with trained regional generators, and building a
// label-matched synthetic copy of a dataset.

#include <map>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "lacgan/dataset.hpp"
#include "lacgan/models.hpp"

namespace lacgan {

/// Requested state per AU. AUs left out are not edited.
using AuTargets = std::map<Au, AuState>;

/// "AU12=present,AU4=absent" (also accepts 1/0 and on/off).
AuTargets parse_targets(std::string_view text);
/// Known labels of a sample as targets, restricted to `aus`.
AuTargets targets_from_labels(const AuLabels& labels, const std::vector<Au>& aus);

struct SynthesisParts {
  std::vector<AttentionMap> attention;  // overlap-normalized, one per edited AU
  std::vector<Image> generated;         // decoder output pasted at full size
  Image output;
};

class Synthesizer {
 public:
  Synthesizer(std::shared_ptr<LacGanModel> model, AURuleTable rules,
              nlohmann::json train_config = nlohmann::json::object());
  /// Throws a load error for unreadable or inconsistent checkpoints.
  static Synthesizer from_checkpoint(const std::string& path);

  const ModelConfig& config() const { return model_->config(); }
  const AURuleTable& rules() const noexcept { return rules_; }
  /// Training configuration stored with the checkpoint (may be empty).
  const nlohmann::json& train_config() const noexcept { return train_config_; }

  /// Rasterizes the attention of every targeted AU, decodes each region
  /// under its target state and composites all of them in one pass.
  SynthesisParts parts(const Image& image, const LandmarkSet& landmarks, const AuTargets& targets);
  Image synthesize(const Image& image, const LandmarkSet& landmarks, const AuTargets& targets) {
    return parts(image, landmarks, targets).output;
  }

 private:
  std::shared_ptr<LacGanModel> model_;
  AURuleTable rules_;
  nlohmann::json train_config_;
};

/// Which frame a synthetic sample is generated from.
enum class SourcePolicy {
  EachFrame,     // every frame with its own labels
  NeutralFrame,  // the subject's frame with the fewest present AUs
};

SourcePolicy parse_source_policy(std::string_view text);

struct AugmentOptions {
  SourcePolicy policy = SourcePolicy::EachFrame;
  bool align = false;
};

/// One synthetic image per manifest row, targeting that row's labels.
/// Writes images/, landmarks/ and manifest.csv under `out_dir`; subjects and
/// labels are copied from the input.
DatasetManifest generate_augmentation_set(Synthesizer& synthesizer, const DatasetManifest& source,
                                          const std::string& out_dir,
                                          const AugmentOptions& options = {});

}  // namespace lacgan
