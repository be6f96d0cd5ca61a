#include "cfexplain/relevance.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>

#include "cfexplain/error.hpp"

namespace cfexplain {
namespace fs = std::filesystem;

namespace {

// Rounded to float so the exported raw map reloads exactly.
Image difference(const Image& a, const Image& b) {
  Image out(a.height, a.width);
  for (std::size_t i = 0; i < a.pixels.size(); ++i) {
    out.pixels[i] = static_cast<float>(a.pixels[i] - b.pixels[i]);
  }
  return out;
}

}  // namespace

std::vector<RelevanceMap> explain(ExplainerBundle& bundle, const std::vector<Image>& xs,
                                  const std::vector<std::string>& ids) {
  if (!bundle.trained) throw StateError("explain: explainer bundle is not trained");
  if (!ids.empty() && ids.size() != xs.size()) throw ArgumentError("explain: one id per image required");
  const int size = bundle.input_size();
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const std::string what = "explain input " + (ids.empty() ? std::to_string(i) : ids[i]);
    validate_unit_image(xs[i], what.c_str());
    if (xs[i].height != size) {
      throw ArgumentError(what + ": size " + std::to_string(xs[i].height) + " != " + std::to_string(size));
    }
  }
  const auto plus = generate(bundle.g_plus, xs);
  const auto minus = generate(bundle.g_minus, xs);
  const auto p0 = classify(bundle.classifier, xs);
  const auto pp = classify(bundle.classifier, plus);
  const auto pm = classify(bundle.classifier, minus);
  std::vector<RelevanceMap> out;
  out.reserve(xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) {
    RelevanceMap m;
    m.source = xs[i];
    m.delta_plus = difference(plus[i], xs[i]);
    m.delta_minus = difference(minus[i], xs[i]);
    m.relevance = difference(plus[i], minus[i]);
    m.source_id = ids.empty() ? "" : ids[i];
    m.prob_before = p0[i];
    m.prob_plus = pp[i];
    m.prob_minus = pm[i];
    out.push_back(std::move(m));
  }
  return out;
}

RelevanceMap explain(ExplainerBundle& bundle, const Image& x, const std::string& id) {
  return std::move(explain(bundle, std::vector<Image>{x}, {id})[0]);
}

double auto_gain(const Image& relevance) {
  if (relevance.pixels.empty()) return 1.0;
  std::vector<double> mag(relevance.pixels.size());
  std::transform(relevance.pixels.begin(), relevance.pixels.end(), mag.begin(),
                 [](double v) { return std::abs(v); });
  std::sort(mag.begin(), mag.end());
  const double pos = 0.99 * static_cast<double>(mag.size() - 1);
  const auto lo = static_cast<std::size_t>(pos);
  const std::size_t hi = std::min(lo + 1, mag.size() - 1);
  const double p99 = mag[lo] + (pos - lo) * (mag[hi] - mag[lo]);
  return p99 > 0.0 ? 1.0 / p99 : 1.0;
}

io::RgbImage render_overlay(const Image& x, const Image& relevance, double gain) {
  if (!x.same_shape(relevance)) throw ArgumentError("render_overlay: image and relevance shapes differ");
  if (!(gain > 0.0) || !std::isfinite(gain)) throw ArgumentError("render_overlay: gain must be a positive number");
  io::RgbImage out{x.height, x.width, std::vector<std::uint8_t>(x.pixels.size() * 3)};
  auto byte = [](double v) { return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 255.0))); };
  for (std::size_t i = 0; i < x.pixels.size(); ++i) {
    const double gray = 255.0 * std::clamp(x.pixels[i], 0.0, 1.0);
    const double r = relevance.pixels[i];
    const double alpha = std::clamp(std::abs(r) * gain, 0.0, 1.0);
    const double mixed = (1.0 - alpha) * gray;
    const double tinted = mixed + alpha * 255.0;
    out.rgb[3 * i + 0] = byte(r > 0.0 ? tinted : mixed);
    out.rgb[3 * i + 1] = byte(mixed);
    out.rgb[3 * i + 2] = byte(r < 0.0 ? tinted : mixed);
  }
  return out;
}

std::string file_stem_for(const std::string& id) {
  if (id.empty()) return "map";
  std::string out = id;
  for (char& ch : out) {
    const bool ok = std::isalnum(static_cast<unsigned char>(ch)) || ch == '.' || ch == '_' || ch == '-';
    if (!ok) ch = '_';
  }
  return out;
}

nlohmann::json probabilities_json(const RelevanceMap& map) {
  return {{"source_id", map.source_id},
          {"prob_before", map.prob_before},
          {"prob_plus", map.prob_plus},
          {"prob_minus", map.prob_minus}};
}

ExportedFiles export_map(const RelevanceMap& map, const fs::path& dir, std::optional<double> gain) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  const double g = gain ? *gain : auto_gain(map.relevance);
  const std::string stem = file_stem_for(map.source_id);
  ExportedFiles files;
  files.overlay = dir / (stem + "_overlay.png");
  files.raw = dir / (stem + "_relevance.f32");
  files.sidecar = io::sidecar_path(files.raw);
  files.probabilities = dir / (stem + "_probabilities.json");
  io::write_png_rgb(files.overlay, render_overlay(map.source, map.relevance, g));
  io::write_raw_f32(files.raw, map.relevance, {{"gain", g}, {"gain_mode", gain ? "fixed" : "auto"}});
  io::write_json(files.probabilities, probabilities_json(map));
  return files;
}

}  // namespace cfexplain
