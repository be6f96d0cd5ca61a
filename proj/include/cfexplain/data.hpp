// Labeled image datasets: the synthetic two-class task, manifest-driven
// loading of preprocessed images, and stratified train/test splitting.
#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "cfexplain/image.hpp"
#include "json.hpp"

namespace cfexplain {

enum class Split { kUnassigned, kTrain, kTest };

const char* to_string(Split s);

struct LabeledSample {
  std::string id;
  Image image;
  int label = 0;
  Split split = Split::kUnassigned;
  std::optional<double> median_rating;
  /// Binary mask of the discriminative region (synthetic data only).
  std::optional<Image> mask;
};

struct DatasetSummary {
  int n_total = 0, n_pos = 0, n_neg = 0;
  int n_train_pos = 0, n_train_neg = 0;
  int n_test_pos = 0, n_test_neg = 0;
  bool operator==(const DatasetSummary&) const = default;
};

DatasetSummary summarize(const std::vector<LabeledSample>& samples);

/// Two-class synthetic task on a faintly textured background. Class 1 images
/// carry a bright, irregularly outlined blob; class 0 images a dimmer smooth
/// bump at a comparable location. The mask marks the structure region in
/// both classes. Deterministic given the seed.
std::vector<LabeledSample> generate_synthetic_dataset(int n, std::uint64_t seed, int size = 64);

struct LoadOptions {
  /// Required image size; 0 accepts the first image's size for all rows.
  int image_size = 0;
  /// Min-max scale all pixel values to [0,1] with dataset-wide bounds.
  bool rescale = true;
  /// Applied to rows whose split column is empty.
  double train_fraction = 0.7;
  std::uint64_t split_seed = 0;
};

struct LoadedDataset {
  std::vector<LabeledSample> samples;
  DatasetSummary summary;
  double intensity_min = 0.0;
  double intensity_max = 1.0;
};

/// Reads `id,path,label,median_rating,split` rows. Rows with a median rating
/// of exactly 3 are dropped; otherwise label = rating > 3 when a rating is
/// present, else the label column. Image paths resolve relative to the
/// manifest's directory.
LoadedDataset load_manifest(const std::filesystem::path& path, const LoadOptions& options = {});

/// Assigns every sample to train or test. Per class, round(fraction · count)
/// samples (half away from zero) go to train, chosen by a seeded shuffle.
std::vector<LabeledSample> stratified_split(std::vector<LabeledSample> samples,
                                            double train_fraction, std::uint64_t seed);

std::vector<const LabeledSample*> select(const std::vector<LabeledSample>& samples, Split split);
std::vector<Image> images_of(const std::vector<const LabeledSample*>& samples);

void to_json(nlohmann::json& j, const DatasetSummary& s);

}  // namespace cfexplain
