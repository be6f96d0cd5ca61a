// Binary classification metrics with bootstrap confidence intervals, and the
// domain-transfer evaluation of a trained explainer.
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cfexplain/image.hpp"
#include "cfexplain/models.hpp"
#include "cfexplain/stats.hpp"
#include "json.hpp"

namespace cfexplain {

namespace stats {
void to_json(nlohmann::json& j, const TTest& t);
}

struct ConfusionCounts {
  long tp = 0, fp = 0, tn = 0, fn = 0;
  long total() const { return tp + fp + tn + fn; }
  bool operator==(const ConfusionCounts&) const = default;
};

/// Predicted positive iff prob >= threshold.
ConfusionCounts confusion(const std::vector<int>& labels, const std::vector<double>& probs,
                          double threshold = 0.5);

// Point metrics. Ratios with a zero denominator are NaN; MCC is 0 when any
// marginal is empty.
double accuracy(const ConfusionCounts& c);
double f1_score(const ConfusionCounts& c);
double sensitivity(const ConfusionCounts& c);
double specificity(const ConfusionCounts& c);
double ppv(const ConfusionCounts& c);
double npv(const ConfusionCounts& c);
double informedness(const ConfusionCounts& c);
double markedness(const ConfusionCounts& c);
double mcc(const ConfusionCounts& c);

/// Probability that a random positive outranks a random negative (ties
/// count half), via midranks. Throws MetricError unless both classes occur.
double rank_auc(const std::vector<int>& labels, const std::vector<double>& probs);

struct Estimate {
  double estimate = 0.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
};

struct MetricReport {
  ConfusionCounts counts;
  double threshold = 0.5;
  int n_boot = 0;
  std::uint64_t seed = 0;
  /// In the fixed order of metric_names().
  std::vector<Estimate> values;

  const Estimate& operator[](const std::string& name) const;
};

/// accuracy, f1, sensitivity, specificity, ppv, npv, informedness,
/// markedness, mcc, auc.
const std::vector<std::string>& metric_names();

/// Point estimates at the threshold, 95% percentile-bootstrap intervals from
/// n_boot resamples (resample b uses its own stream derived from seed).
/// Intervals are widened if needed so they contain the point estimate.
/// Resamples on which a metric is undefined are left out for that metric.
MetricReport compute_metrics(const std::vector<int>& labels, const std::vector<double>& probs,
                             double threshold = 0.5, int n_boot = 10000, std::uint64_t seed = 0);

struct TransferReport {
  int n = 0;
  Estimate mean_prob_original;
  Estimate mean_prob_plus;
  Estimate mean_prob_minus;
  stats::TTest plus_vs_original;   // C(G⁺(x)) − C(x)
  stats::TTest minus_vs_original;  // C(G⁻(x)) − C(x)
  /// Share of samples with C(G⁺(x)) > C(G⁻(x)).
  double fraction_plus_above_minus = 0.0;
};

/// Means with 95% percentile-bootstrap intervals; paired two-tailed t-tests
/// with df = n − 1.
TransferReport transfer_report(const std::vector<double>& original, const std::vector<double>& plus,
                               const std::vector<double>& minus, int n_boot, std::uint64_t seed);

struct TransferProbabilities {
  std::vector<double> original, plus, minus;
};

/// Classifier probabilities on x, G⁺(x), G⁻(x). Throws StateError for an
/// untrained bundle.
TransferProbabilities transfer_probabilities(ExplainerBundle& bundle, const std::vector<Image>& xs);
TransferReport evaluate_transfer(ExplainerBundle& bundle, const std::vector<Image>& xs,
                                 int n_boot = 10000, std::uint64_t seed = 0);

void to_json(nlohmann::json& j, const ConfusionCounts& c);
void to_json(nlohmann::json& j, const Estimate& e);
void to_json(nlohmann::json& j, const MetricReport& r);
void to_json(nlohmann::json& j, const TransferReport& r);

/// `metric,estimate,ci_low,ci_high`
std::string to_csv(const MetricReport& r);
/// `quantity,estimate,ci_low,ci_high,t,p,df`
std::string to_csv(const TransferReport& r);

}  // namespace cfexplain
