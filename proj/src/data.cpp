#include "cfexplain/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>
#include <set>
#include <sstream>

#include "cfexplain/error.hpp"
#include "cfexplain/io.hpp"
#include "cfexplain/nn/layers.hpp"

namespace cfexplain {
namespace fs = std::filesystem;
using nn::standard_normal;
using nn::uniform01;

const char* to_string(Split s) {
  switch (s) {
    case Split::kTrain: return "train";
    case Split::kTest: return "test";
    default: return "";
  }
}

DatasetSummary summarize(const std::vector<LabeledSample>& samples) {
  DatasetSummary s;
  for (const auto& x : samples) {
    ++s.n_total;
    const bool pos = x.label == 1;
    (pos ? s.n_pos : s.n_neg)++;
    if (x.split == Split::kTrain) (pos ? s.n_train_pos : s.n_train_neg)++;
    if (x.split == Split::kTest) (pos ? s.n_test_pos : s.n_test_neg)++;
  }
  return s;
}

namespace {

double uniform(std::mt19937_64& rng, double lo, double hi) { return lo + (hi - lo) * uniform01(rng); }

Image synthetic_image(int size, int label, std::mt19937_64& rng, Image& mask) {
  Image img(size, size);
  // Low-frequency texture plus fine noise.
  struct Wave { double fx, fy, phase, amp; };
  std::vector<Wave> waves;
  for (int i = 0; i < 3; ++i) {
    waves.push_back({uniform(rng, 0.5, 3.0), uniform(rng, 0.5, 3.0),
                     uniform(rng, 0.0, 2.0 * std::numbers::pi), uniform(rng, 0.015, 0.03)});
  }
  const double base = uniform(rng, 0.22, 0.30);
  for (int r = 0; r < size; ++r) {
    for (int c = 0; c < size; ++c) {
      double v = base;
      for (const auto& w : waves) {
        v += w.amp * std::sin(2.0 * std::numbers::pi * (w.fx * c + w.fy * r) / size + w.phase);
      }
      img(r, c) = v + 0.015 * standard_normal(rng);
    }
  }

  const double cy = uniform(rng, 0.3, 0.7) * size;
  const double cx = uniform(rng, 0.3, 0.7) * size;
  const double radius = uniform(rng, 0.08, 0.12) * size;
  const int lobes = 3 + static_cast<int>(rng() % 3);
  const double phase1 = uniform(rng, 0.0, 2.0 * std::numbers::pi);
  const double phase2 = uniform(rng, 0.0, 2.0 * std::numbers::pi);
  const double bright = uniform(rng, 0.40, 0.50);
  const double smooth = uniform(rng, 0.20, 0.26);

  mask = Image(size, size);
  for (int r = 0; r < size; ++r) {
    for (int c = 0; c < size; ++c) {
      const double dy = r + 0.5 - cy, dx = c + 0.5 - cx;
      const double dist = std::hypot(dx, dy);
      if (dist <= 1.4 * radius) mask(r, c) = 1.0;
      if (label == 1) {
        const double theta = std::atan2(dy, dx);
        const double edge = radius * (1.0 + 0.25 * std::sin(lobes * theta + phase1) +
                                      0.12 * std::sin((lobes + 2) * theta + phase2));
        // Soft one-pixel rim.
        const double inside = std::clamp(edge - dist + 0.5, 0.0, 1.0);
        img(r, c) += inside * (bright + 0.04 * standard_normal(rng));
      } else {
        const double sigma = radius / 1.5;
        img(r, c) += smooth * std::exp(-dist * dist / (2.0 * sigma * sigma));
      }
    }
  }
  for (double& v : img.pixels) v = std::clamp(v, 0.0, 1.0);
  return img;
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) cells.push_back(cell);
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  for (auto& c : cells) {
    while (!c.empty() && (c.back() == '\r' || c.back() == ' ')) c.pop_back();
    while (!c.empty() && c.front() == ' ') c.erase(c.begin());
  }
  return cells;
}

double parse_double(const std::string& s, const std::string& where) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size() || !std::isfinite(v)) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw LoadError(where + ": not a number: '" + s + "'");
  }
}

}  // namespace

std::vector<LabeledSample> generate_synthetic_dataset(int n, std::uint64_t seed, int size) {
  if (n < 2) throw ArgumentError("generate_synthetic_dataset: n must be >= 2");
  if (size < 16) throw ArgumentError("generate_synthetic_dataset: size must be >= 16");
  std::mt19937_64 rng(seed);
  std::vector<LabeledSample> out;
  out.reserve(n);
  for (int i = 0; i < n; ++i) {
    LabeledSample s;
    char id[32];
    std::snprintf(id, sizeof id, "syn%05d", i);
    s.id = id;
    s.label = i % 2;
    Image mask;
    s.image = synthetic_image(size, s.label, rng, mask);
    s.mask = std::move(mask);
    out.push_back(std::move(s));
  }
  return out;
}

LoadedDataset load_manifest(const fs::path& path, const LoadOptions& options) {
  if (!fs::exists(path)) throw LoadError("manifest not found: " + path.string());
  std::ifstream in(path);
  if (!in) throw LoadError("cannot open manifest " + path.string());
  const fs::path base = path.parent_path();

  LoadedDataset out;
  std::string line;
  if (!std::getline(in, line)) {
    out.summary = {};
    return out;  // empty file
  }
  const std::vector<std::string> expected{"id", "path", "label", "median_rating", "split"};
  if (split_csv(line) != expected) {
    throw LoadError("manifest " + path.string() + ": header must be id,path,label,median_rating,split");
  }

  std::set<std::string> ids;
  int row = 1;
  int size = options.image_size;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty() || line == "\r") continue;
    const std::string where = "manifest " + path.string() + " row " + std::to_string(row);
    const auto cells = split_csv(line);
    if (cells.size() != 5) throw LoadError(where + ": expected 5 columns, got " + std::to_string(cells.size()));
    LabeledSample s;
    s.id = cells[0];
    if (s.id.empty()) throw LoadError(where + ": empty id");
    if (!ids.insert(s.id).second) throw LoadError(where + ": duplicate id '" + s.id + "'");
    if (!cells[3].empty()) {
      s.median_rating = parse_double(cells[3], where);
      if (*s.median_rating == 3.0) continue;  // borderline cases are discarded
      s.label = *s.median_rating > 3.0 ? 1 : 0;
    } else if (cells[2] == "0" || cells[2] == "1") {
      s.label = cells[2] == "1" ? 1 : 0;
    } else {
      throw LoadError(where + ": label must be 0 or 1 when median_rating is empty");
    }
    if (cells[4] == "train") s.split = Split::kTrain;
    else if (cells[4] == "test") s.split = Split::kTest;
    else if (!cells[4].empty()) throw LoadError(where + ": split must be train, test or empty");

    const fs::path img_path = fs::path(cells[1]).is_absolute() ? fs::path(cells[1]) : base / cells[1];
    try {
      s.image = io::read_image(img_path);
    } catch (const Error& e) {
      throw LoadError(where + ": " + e.what());
    }
    if (s.image.height != s.image.width) throw LoadError(where + ": image is not square");
    if (size == 0) size = s.image.height;
    if (s.image.height != size) {
      throw LoadError(where + ": image size " + std::to_string(s.image.height) + " != expected " +
                      std::to_string(size));
    }
    for (double v : s.image.pixels) {
      if (!std::isfinite(v)) throw LoadError(where + ": non-finite pixel");
    }
    out.samples.push_back(std::move(s));
  }

  if (!out.samples.empty()) {
    double lo = out.samples.front().image.pixels.front(), hi = lo;
    for (const auto& s : out.samples) {
      const auto [mn, mx] = std::minmax_element(s.image.pixels.begin(), s.image.pixels.end());
      lo = std::min(lo, *mn);
      hi = std::max(hi, *mx);
    }
    out.intensity_min = lo;
    out.intensity_max = hi;
    if (options.rescale && hi > lo) {
      for (auto& s : out.samples) {
        for (double& v : s.image.pixels) v = (v - lo) / (hi - lo);
      }
    } else {
      out.intensity_min = 0.0;
      out.intensity_max = 1.0;
      for (const auto& s : out.samples) validate_unit_image(s.image, ("sample " + s.id).c_str());
    }
  }

  // Rows without an explicit split are split per class; manifest order is kept.
  std::vector<std::size_t> open_rows;
  std::vector<LabeledSample> unassigned;
  for (std::size_t i = 0; i < out.samples.size(); ++i) {
    if (out.samples[i].split != Split::kUnassigned) continue;
    open_rows.push_back(i);
    unassigned.push_back(std::move(out.samples[i]));
  }
  if (!unassigned.empty()) {
    unassigned = stratified_split(std::move(unassigned), options.train_fraction, options.split_seed);
    for (std::size_t k = 0; k < open_rows.size(); ++k) out.samples[open_rows[k]] = std::move(unassigned[k]);
  }
  out.summary = summarize(out.samples);
  return out;
}

std::vector<LabeledSample> stratified_split(std::vector<LabeledSample> samples,
                                            double train_fraction, std::uint64_t seed) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    throw ArgumentError("stratified_split: train_fraction must be in (0,1)");
  }
  std::vector<std::size_t> by_class[2];
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const int label = samples[i].label;
    if (label != 0 && label != 1) throw ArgumentError("stratified_split: label must be 0 or 1");
    by_class[label].push_back(i);
  }
  if (by_class[0].empty() || by_class[1].empty()) {
    throw ArgumentError("stratified_split: each class needs at least one sample");
  }
  std::mt19937_64 rng(seed);
  for (auto& idx : by_class) {
    // Fisher-Yates with the portable uniform draw.
    for (std::size_t i = idx.size(); i > 1; --i) {
      const std::size_t j = static_cast<std::size_t>(uniform01(rng) * i);
      std::swap(idx[i - 1], idx[j]);
    }
    const auto n_train = static_cast<std::size_t>(std::lround(train_fraction * idx.size()));
    for (std::size_t k = 0; k < idx.size(); ++k) {
      samples[idx[k]].split = k < n_train ? Split::kTrain : Split::kTest;
    }
  }
  return samples;
}

std::vector<const LabeledSample*> select(const std::vector<LabeledSample>& samples, Split split) {
  std::vector<const LabeledSample*> out;
  for (const auto& s : samples) {
    if (s.split == split) out.push_back(&s);
  }
  return out;
}

std::vector<Image> images_of(const std::vector<const LabeledSample*>& samples) {
  std::vector<Image> out;
  out.reserve(samples.size());
  for (const auto* s : samples) out.push_back(s->image);
  return out;
}

void to_json(nlohmann::json& j, const DatasetSummary& s) {
  j = {{"n_total", s.n_total},         {"n_pos", s.n_pos},
       {"n_neg", s.n_neg},             {"n_train_pos", s.n_train_pos},
       {"n_train_neg", s.n_train_neg}, {"n_test_pos", s.n_test_pos},
       {"n_test_neg", s.n_test_neg}};
}

}  // namespace cfexplain
