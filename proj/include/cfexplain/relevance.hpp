// Signed relevance maps from a trained explainer and their visualization.
#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "cfexplain/image.hpp"
#include "cfexplain/io.hpp"
#include "cfexplain/models.hpp"

namespace cfexplain {

struct RelevanceMap {
  Image source;
  Image delta_plus;   // G⁺(x) − x
  Image delta_minus;  // G⁻(x) − x
  Image relevance;    // G⁺(x) − G⁻(x)
  std::string source_id;
  double prob_before = 0.0;
  double prob_plus = 0.0;
  double prob_minus = 0.0;
};

/// Throws StateError for an untrained bundle, ArgumentError for an image of
/// the wrong size or outside [0,1].
RelevanceMap explain(ExplainerBundle& bundle, const Image& x, const std::string& id = "");
std::vector<RelevanceMap> explain(ExplainerBundle& bundle, const std::vector<Image>& xs,
                                  const std::vector<std::string>& ids);

/// 1 / (99th percentile of |R|), linear interpolation between order
/// statistics; 1 when that percentile is 0.
double auto_gain(const Image& relevance);

/// Grayscale base tinted red where R > 0 and blue where R < 0, with opacity
/// clamp(|R|·gain, 0, 1). Pixels with R = 0 keep the plain grayscale value.
io::RgbImage render_overlay(const Image& x, const Image& relevance, double gain);

struct ExportedFiles {
  std::filesystem::path overlay;
  std::filesystem::path raw;
  std::filesystem::path sidecar;
  std::filesystem::path probabilities;
};

/// Safe file stem derived from an id: characters outside [A-Za-z0-9._-]
/// become '_'; empty ids become "map".
std::string file_stem_for(const std::string& id);

/// Writes `<stem>_overlay.png`, `<stem>_relevance.f32` with its sidecar
/// `<stem>_relevance.json` ({"height","width","gain","gain_mode"}), and
/// `<stem>_probabilities.json`. `gain` unset means auto.
ExportedFiles export_map(const RelevanceMap& map, const std::filesystem::path& dir,
                         std::optional<double> gain = std::nullopt);

nlohmann::json probabilities_json(const RelevanceMap& map);

}  // namespace cfexplain
