// The three network families: the classifier being explained, the U-Net
// generators and the pairwise multiscale PatchGAN discriminators.
#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "cfexplain/image.hpp"
#include "cfexplain/nn/layers.hpp"
#include "json.hpp"

namespace cfexplain {

using nn::NormMode;
using nn::Var;

struct ConvBlockSpec {
  int kernels = 32;
  int stride = 1;
  bool operator==(const ConvBlockSpec&) const = default;
};

struct ClassifierSpec {
  std::vector<ConvBlockSpec> blocks{{32, 1}, {64, 2}, {128, 2}, {256, 2}};
  bool operator==(const ClassifierSpec&) const = default;
};

struct GeneratorSpec {
  int depth = 3;
  int convs_per_stage = 3;
  std::vector<int> stage_kernels{48, 96, 192, 384};
  float leak = 0.2f;
  bool operator==(const GeneratorSpec&) const = default;
};

struct DiscriminatorSpec {
  GeneratorSpec backbone;
  std::vector<int> tap_stages{2, 3};
  bool operator==(const DiscriminatorSpec&) const = default;
};

void validate(const ClassifierSpec& spec, int input_size);
void validate(const GeneratorSpec& spec, int input_size);
void validate(const DiscriminatorSpec& spec, int input_size);

/// Strided convolutional classifier with a two-way softmax head.
class Classifier {
 public:
  Classifier(const ClassifierSpec& spec, int input_size, std::uint64_t seed);
  Classifier(Classifier&&) = default;
  Classifier& operator=(Classifier&&) = default;

  /// Class probabilities, shape [N, 2, 1, 1].
  Var forward(const Var& x, NormMode mode);
  /// Pre-softmax scores, shape [N, 2, 1, 1].
  Var forward_logits(const Var& x, NormMode mode);
  /// Spatial extent of the last block's output.
  int feature_size() const { return feature_size_; }

  nn::ParameterSet parameters();
  const ClassifierSpec& spec() const { return spec_; }
  int input_size() const { return input_size_; }
  std::uint64_t seed() const { return seed_; }

 private:
  ClassifierSpec spec_;
  int input_size_ = 0;
  std::uint64_t seed_ = 0;
  int feature_size_ = 0;
  std::vector<nn::ConvBlock> blocks_;
  nn::Linear head_;
};

/// Shape-preserving U-Net with nearest-neighbour upsampling and a sigmoid
/// output bounded to [0,1].
class Generator {
 public:
  Generator(const GeneratorSpec& spec, int input_size, std::uint64_t seed);
  Generator(Generator&&) = default;
  Generator& operator=(Generator&&) = default;

  Var forward(const Var& x, NormMode mode);
  nn::ParameterSet parameters();
  const GeneratorSpec& spec() const { return spec_; }
  int input_size() const { return input_size_; }
  std::uint64_t seed() const { return seed_; }

 private:
  GeneratorSpec spec_;
  int input_size_ = 0;
  std::uint64_t seed_ = 0;
  std::vector<std::vector<nn::ConvBlock>> encoder_;  // depth + 1 stages
  std::vector<std::vector<nn::ConvBlock>> decoder_;  // depth stages, deepest first
  nn::Conv2d output_;
};

struct DiscriminatorOutput {
  /// Per tap stage, [N, 2, h, w]. Channel 0 is the probability that the first
  /// input of the pair is the real image, channel 1 the second.
  std::vector<Var> probs;
  /// The matching pre-softmax scores, same layout.
  std::vector<Var> logits;
  /// Per tap stage, the slot permutation applied before classification
  /// (one flag per (n, h, w); 1 means the pair was presented swapped).
  std::vector<std::vector<std::uint8_t>> swaps;
};

/// Pairwise PatchGAN: a shared encoder extracts features of both images, and
/// at each position of each tap stage a two-neuron softmax decides which slot
/// holds the real image.
class Discriminator {
 public:
  Discriminator(const DiscriminatorSpec& spec, int input_size, std::uint64_t seed);
  Discriminator(Discriminator&&) = default;
  Discriminator& operator=(Discriminator&&) = default;

  /// Draws the slot permutation from `rng`.
  DiscriminatorOutput forward(const Var& first, const Var& second, NormMode mode,
                              std::mt19937_64& rng);
  /// Uses the given slot permutation (one mask per tap stage).
  DiscriminatorOutput forward(const Var& first, const Var& second, NormMode mode,
                              const std::vector<std::vector<std::uint8_t>>& swaps);

  /// Output spatial extent per tap stage.
  std::vector<int> tap_sizes() const;
  nn::ParameterSet parameters();
  const DiscriminatorSpec& spec() const { return spec_; }
  int input_size() const { return input_size_; }
  std::uint64_t seed() const { return seed_; }

 private:
  DiscriminatorSpec spec_;
  int input_size_ = 0;
  std::uint64_t seed_ = 0;
  std::vector<std::vector<nn::ConvBlock>> encoder_;
  std::vector<nn::Conv2d> heads_;
};

/// Mean cross entropy of a discriminator output against the slot that holds
/// the real image (0 = first, 1 = second), averaged over positions and taps.
Var discriminator_loss(const DiscriminatorOutput& out, int real_slot);

Classifier build_classifier(const ClassifierSpec& spec, int input_size, std::uint64_t seed);
Generator build_generator(const GeneratorSpec& spec, int input_size, std::uint64_t seed);
Discriminator build_discriminator(const DiscriminatorSpec& spec, int input_size,
                                  std::uint64_t seed);

/// Probability of class 1 for each image, inference mode.
std::vector<double> classify(Classifier& c, const std::vector<Image>& images);
double classify(Classifier& c, const Image& image);

/// Runs a generator in inference mode.
std::vector<Image> generate(Generator& g, const std::vector<Image>& images);
Image generate(Generator& g, const Image& image);

/// The trained explainer: a frozen classifier plus both generators and their
/// discriminators.
struct ExplainerBundle {
  Classifier classifier;
  Generator g_plus;
  Generator g_minus;
  Discriminator d_plus;
  Discriminator d_minus;
  std::uint64_t seed = 0;
  bool trained = false;

  int input_size() const { return classifier.input_size(); }
  std::string fingerprint() const;
};

/// Binds a classifier (frozen from here on) to freshly initialized
/// generators and discriminators.
ExplainerBundle make_bundle(Classifier classifier, const GeneratorSpec& gen_spec,
                            const DiscriminatorSpec& disc_spec, std::uint64_t seed);

// JSON conversion of specs.
void to_json(nlohmann::json& j, const ConvBlockSpec& s);
void from_json(const nlohmann::json& j, ConvBlockSpec& s);
void to_json(nlohmann::json& j, const ClassifierSpec& s);
void from_json(const nlohmann::json& j, ClassifierSpec& s);
void to_json(nlohmann::json& j, const GeneratorSpec& s);
void from_json(const nlohmann::json& j, GeneratorSpec& s);
void to_json(nlohmann::json& j, const DiscriminatorSpec& s);
void from_json(const nlohmann::json& j, DiscriminatorSpec& s);

/// Independent sub-seed per stream (splitmix64 finalizer), so adding a
/// network never perturbs the others.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

std::string hex64(std::uint64_t v);
std::uint64_t fnv1a(std::string_view bytes);

// Checkpoints: `<path>` holds raw tensors, `<path>.json` the sidecar with
// specs, seed and fingerprint. Writes are atomic (temp file + rename).
void save_classifier(Classifier& c, const std::filesystem::path& path);
Classifier load_classifier(const std::filesystem::path& path);
void save_bundle(ExplainerBundle& b, const std::filesystem::path& path);
ExplainerBundle load_bundle(const std::filesystem::path& path);

}  // namespace cfexplain
