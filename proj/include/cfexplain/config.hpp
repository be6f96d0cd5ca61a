// Run configuration for the command-line tools: defaults, a JSON file and
// dotted `key=value` overrides, in increasing precedence.
#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "cfexplain/data.hpp"
#include "cfexplain/models.hpp"
#include "cfexplain/training.hpp"
#include "json.hpp"

namespace cfexplain {

struct DataConfig {
  /// "synthetic" or "manifest".
  std::string source = "synthetic";
  std::string manifest;
  int n_synthetic = 400;
  int image_size = 64;
  double train_fraction = 0.7;
  std::uint64_t split_seed = 0;
  bool rescale = true;
};

struct RunConfig {
  std::uint64_t seed = 0;
  std::string output_dir = "runs/default";
  DataConfig data;
  ClassifierSpec classifier;
  GeneratorSpec generator;
  DiscriminatorSpec discriminator;
  TrainConfig classifier_train;
  TrainConfig explainer_train;
  /// Empty means `<output_dir>/classifier.cfxw`.
  std::string classifier_checkpoint;
  /// Empty means `<output_dir>/explainer.cfxw`.
  std::string bundle_checkpoint;
  int n_boot = 10000;
  double threshold = 0.5;
  /// Overlay gain; unset means auto.
  std::optional<double> gain;

  std::filesystem::path classifier_path() const;
  std::filesystem::path bundle_path() const;
};

nlohmann::json to_json(const RunConfig& c);
/// Strict: every key must be known; types must match. Throws ConfigError
/// naming the dotted path.
RunConfig run_config_from_json(const nlohmann::json& j);

/// Throws ConfigError naming the first invalid field.
void validate(const RunConfig& c);

/// Sets a dotted path (`explainer_train.optimizer.learning_rate=1e-3`). The
/// value is parsed as JSON when possible, else taken as a string. Unknown
/// paths are rejected.
void apply_override(nlohmann::json& config, const std::string& assignment);

/// defaults ← file (if given) ← overrides, then validated.
RunConfig resolve_config(const std::optional<std::filesystem::path>& file,
                         const std::vector<std::string>& overrides);

/// The configured dataset with train/test assignment: synthetic samples
/// seeded from the run seed, or a manifest.
std::vector<LabeledSample> load_dataset(const RunConfig& c);

}  // namespace cfexplain
