// Classifier training and the alternating adversarial explainer training.
#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "cfexplain/data.hpp"
#include "cfexplain/losses.hpp"
#include "cfexplain/models.hpp"
#include "json.hpp"

namespace cfexplain {

struct OptimizerConfig {
  std::string kind = "adam";
  double learning_rate = 2e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct ConvergenceConfig {
  int window = 5;  // epochs
  double rel_tol = 1e-3;
};

struct TrainConfig {
  int batch_size = 8;
  int max_epochs = 50;
  OptimizerConfig optimizer;
  LossWeights weights;
  SsimParams ssim;
  ConvergenceConfig convergence;
  std::uint64_t seed = 0;
  /// Held-out images summarized once per epoch in the training log.
  int probe_size = 32;
  /// Classifier training only: SD of Gaussian noise added to every pixel of
  /// each batch, with a per-image brightness offset of half that SD, clamped
  /// to [0,1]. 0 disables.
  double input_noise = 0.0;
};

/// Throws ArgumentError naming the offending field as `<prefix>.<field>`.
void validate(const TrainConfig& c, const std::string& prefix = "train");

/// Adaptive-moment gradient descent over a fixed parameter list.
class Adam {
 public:
  Adam(std::vector<Var> params, const OptimizerConfig& config);
  void zero_grad();
  void step();
  long steps() const { return t_; }

 private:
  std::vector<Var> params_;
  std::vector<Tensor> m_, v_;
  OptimizerConfig config_;
  long t_ = 0;
};

/// Inverse-frequency class weights normalized to mean 1 over samples:
/// w_c = N / (2·N_c). Index 0 is the negative class.
std::array<double, 2> class_weights(int n_neg, int n_pos);

struct ClassifierTrainResult {
  std::vector<double> epoch_losses;
  std::vector<int> test_labels;
  std::vector<double> test_probs;
  double test_accuracy = 0.0;
  int epochs_run = 0;
};

/// Weighted cross-entropy training on the train split; evaluates on the test
/// split. Throws TrainingError if the train split lacks either class or the
/// loss becomes non-finite.
ClassifierTrainResult train_classifier(Classifier& c, const std::vector<LabeledSample>& samples,
                                       const TrainConfig& config);

struct GeneratorTerms {
  double cycle = 0.0, similarity = 0.0, adversarial = 0.0, activation = 0.0, total = 0.0;
};

struct ProbeSummary {
  double mean_prob_original = 0.0;
  double mean_prob_plus = 0.0;
  double mean_prob_minus = 0.0;
};

struct TrainRecord {
  long step = 0;
  int epoch = 0;
  GeneratorTerms g_plus;
  GeneratorTerms g_minus;
  double d_plus = 0.0;
  double d_minus = 0.0;
  /// Present on the last step of each epoch.
  std::optional<ProbeSummary> probe;
};

struct TrainLog {
  std::vector<TrainRecord> records;
  int epochs_run = 0;
  bool converged = false;
};

void to_json(nlohmann::json& j, const TrainRecord& r);
/// One compact JSON object per line.
std::string to_jsonl(const TrainLog& log);

using StepCallback = std::function<void(const TrainRecord&)>;

/// Alternating training: per batch, first both discriminators on
/// (G(x_a), x_b) pairs with random slot order, then both generators on the
/// composite objective with the discriminators frozen. G⁺ maximizes class 1,
/// G⁻ class 0; sample labels are never read. Stops when the windowed mean of
/// the summed generator losses changes by less than rel_tol, or at
/// max_epochs. Throws TrainingError on a non-finite loss (records emitted so
/// far have already gone to `on_step`).
TrainLog train_explainer(ExplainerBundle& bundle, const std::vector<LabeledSample>& samples,
                         const TrainConfig& config, const StepCallback& on_step = {});

/// Runs one alternating step on the given batches; exposed for tests.
TrainRecord explainer_step(ExplainerBundle& bundle, const std::vector<Image>& batch_a,
                           const std::vector<Image>& batch_b, const TrainConfig& config,
                           Adam& opt_g, Adam& opt_d, std::mt19937_64& rng);

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

}  // namespace cfexplain
