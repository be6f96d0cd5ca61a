#include "cfexplain/metrics.hpp"

#include <cmath>
#include <limits>
#include <sstream>

#include "cfexplain/error.hpp"
#include "cfexplain/nn/layers.hpp"

namespace cfexplain {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

double ratio(double num, double den) { return den == 0.0 ? kNaN : num / den; }

void check_aligned(const std::vector<int>& labels, const std::vector<double>& probs) {
  if (labels.size() != probs.size()) throw ArgumentError("labels and probabilities differ in length");
  if (labels.empty()) throw ArgumentError("no samples");
  for (int y : labels) {
    if (y != 0 && y != 1) throw ArgumentError("labels must be 0 or 1");
  }
  for (double p : probs) {
    if (!std::isfinite(p)) throw ArgumentError("probabilities must be finite");
  }
}

std::vector<double> point_metrics(const std::vector<int>& labels, const std::vector<double>& probs,
                                  double threshold, bool need_auc) {
  const ConfusionCounts c = confusion(labels, probs, threshold);
  double auc = kNaN;
  const long pos = c.tp + c.fn;
  if (pos > 0 && pos < c.total()) auc = rank_auc(labels, probs);
  else if (need_auc) rank_auc(labels, probs);  // throws
  return {accuracy(c),     f1_score(c),   sensitivity(c), specificity(c), ppv(c),
          npv(c),          informedness(c), markedness(c), mcc(c),         auc};
}

Estimate bootstrap_mean(const std::vector<double>& v, int n_boot, std::uint64_t seed) {
  Estimate e;
  e.estimate = stats::mean(v);
  e.ci_low = e.ci_high = e.estimate;
  if (n_boot <= 0) return e;
  std::vector<double> means(static_cast<std::size_t>(n_boot));
  const std::size_t n = v.size();
  for (int b = 0; b < n_boot; ++b) {
    std::mt19937_64 rng(derive_seed(seed, static_cast<std::uint64_t>(b)));
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += v[static_cast<std::size_t>(nn::uniform01(rng) * n)];
    means[b] = s / static_cast<double>(n);
  }
  e.ci_low = std::min(stats::quantile(means, 0.025), e.estimate);
  e.ci_high = std::max(stats::quantile(means, 0.975), e.estimate);
  return e;
}

}  // namespace

ConfusionCounts confusion(const std::vector<int>& labels, const std::vector<double>& probs,
                          double threshold) {
  check_aligned(labels, probs);
  ConfusionCounts c;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const bool pred = probs[i] >= threshold;
    if (labels[i] == 1) (pred ? c.tp : c.fn)++;
    else (pred ? c.fp : c.tn)++;
  }
  return c;
}

double accuracy(const ConfusionCounts& c) { return ratio(c.tp + c.tn, c.total()); }
double f1_score(const ConfusionCounts& c) { return ratio(2.0 * c.tp, 2.0 * c.tp + c.fp + c.fn); }
double sensitivity(const ConfusionCounts& c) { return ratio(c.tp, c.tp + c.fn); }
double specificity(const ConfusionCounts& c) { return ratio(c.tn, c.tn + c.fp); }
double ppv(const ConfusionCounts& c) { return ratio(c.tp, c.tp + c.fp); }
double npv(const ConfusionCounts& c) { return ratio(c.tn, c.tn + c.fn); }
double informedness(const ConfusionCounts& c) { return sensitivity(c) + specificity(c) - 1.0; }
double markedness(const ConfusionCounts& c) { return ppv(c) + npv(c) - 1.0; }

double mcc(const ConfusionCounts& c) {
  const double a = c.tp + c.fp, b = c.tp + c.fn, d = c.tn + c.fp, e = c.tn + c.fn;
  if (a == 0.0 || b == 0.0 || d == 0.0 || e == 0.0) return 0.0;
  return (static_cast<double>(c.tp) * c.tn - static_cast<double>(c.fp) * c.fn) / std::sqrt(a * b * d * e);
}

double rank_auc(const std::vector<int>& labels, const std::vector<double>& probs) {
  check_aligned(labels, probs);
  const auto ranks = stats::midranks(probs);
  double n_pos = 0.0, rank_sum = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] == 1) {
      n_pos += 1.0;
      rank_sum += ranks[i];
    }
  }
  const double n_neg = static_cast<double>(labels.size()) - n_pos;
  if (n_pos == 0.0 || n_neg == 0.0) throw MetricError("AUC is undefined unless both classes are present");
  return (rank_sum - n_pos * (n_pos + 1.0) / 2.0) / (n_pos * n_neg);
}

const std::vector<std::string>& metric_names() {
  static const std::vector<std::string> names{"accuracy",     "f1",         "sensitivity", "specificity",
                                              "ppv",          "npv",        "informedness", "markedness",
                                              "mcc",          "auc"};
  return names;
}

const Estimate& MetricReport::operator[](const std::string& name) const {
  const auto& names = metric_names();
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (names[i] == name) return values.at(i);
  }
  throw ArgumentError("unknown metric '" + name + "'");
}

MetricReport compute_metrics(const std::vector<int>& labels, const std::vector<double>& probs,
                             double threshold, int n_boot, std::uint64_t seed) {
  if (n_boot < 0) throw ArgumentError("n_boot must be >= 0");
  MetricReport r;
  r.counts = confusion(labels, probs, threshold);
  r.threshold = threshold;
  r.n_boot = n_boot;
  r.seed = seed;
  const auto point = point_metrics(labels, probs, threshold, true);
  const std::size_t m = point.size();
  std::vector<std::vector<double>> boot(m);
  const std::size_t n = labels.size();
  std::vector<int> bl(n);
  std::vector<double> bp(n);
  for (int b = 0; b < n_boot; ++b) {
    std::mt19937_64 rng(derive_seed(seed, static_cast<std::uint64_t>(b)));
    for (std::size_t i = 0; i < n; ++i) {
      const auto k = static_cast<std::size_t>(nn::uniform01(rng) * n);
      bl[i] = labels[k];
      bp[i] = probs[k];
    }
    const auto v = point_metrics(bl, bp, threshold, false);
    for (std::size_t k = 0; k < m; ++k) {
      if (std::isfinite(v[k])) boot[k].push_back(v[k]);
    }
  }
  for (std::size_t k = 0; k < m; ++k) {
    Estimate e{point[k], point[k], point[k]};
    if (std::isfinite(point[k]) && !boot[k].empty()) {
      e.ci_low = std::min(stats::quantile(boot[k], 0.025), point[k]);
      e.ci_high = std::max(stats::quantile(boot[k], 0.975), point[k]);
    }
    r.values.push_back(e);
  }
  return r;
}

TransferReport transfer_report(const std::vector<double>& original, const std::vector<double>& plus,
                               const std::vector<double>& minus, int n_boot, std::uint64_t seed) {
  if (original.empty()) throw ArgumentError("transfer report needs at least one sample");
  if (plus.size() != original.size() || minus.size() != original.size()) {
    throw ArgumentError("transfer report: probability lists differ in length");
  }
  TransferReport r;
  r.n = static_cast<int>(original.size());
  r.mean_prob_original = bootstrap_mean(original, n_boot, derive_seed(seed, 1));
  r.mean_prob_plus = bootstrap_mean(plus, n_boot, derive_seed(seed, 2));
  r.mean_prob_minus = bootstrap_mean(minus, n_boot, derive_seed(seed, 3));
  r.plus_vs_original = stats::paired_t_test(plus, original);
  r.minus_vs_original = stats::paired_t_test(minus, original);
  int above = 0;
  for (std::size_t i = 0; i < original.size(); ++i) above += plus[i] > minus[i];
  r.fraction_plus_above_minus = static_cast<double>(above) / r.n;
  return r;
}

TransferProbabilities transfer_probabilities(ExplainerBundle& bundle, const std::vector<Image>& xs) {
  if (!bundle.trained) throw StateError("transfer evaluation needs a trained explainer bundle");
  TransferProbabilities t;
  t.original = classify(bundle.classifier, xs);
  t.plus = classify(bundle.classifier, generate(bundle.g_plus, xs));
  t.minus = classify(bundle.classifier, generate(bundle.g_minus, xs));
  return t;
}

TransferReport evaluate_transfer(ExplainerBundle& bundle, const std::vector<Image>& xs, int n_boot,
                                 std::uint64_t seed) {
  const auto t = transfer_probabilities(bundle, xs);
  return transfer_report(t.original, t.plus, t.minus, n_boot, seed);
}

void to_json(nlohmann::json& j, const ConfusionCounts& c) {
  j = {{"tp", c.tp}, {"fp", c.fp}, {"tn", c.tn}, {"fn", c.fn}};
}

namespace {
// NaN has no JSON form; undefined values are written as null.
nlohmann::json number(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); }
}  // namespace

void to_json(nlohmann::json& j, const Estimate& e) {
  j = {{"estimate", number(e.estimate)}, {"ci_low", number(e.ci_low)}, {"ci_high", number(e.ci_high)}};
}

void to_json(nlohmann::json& j, const MetricReport& r) {
  nlohmann::json metrics = nlohmann::json::object();
  for (std::size_t i = 0; i < r.values.size(); ++i) metrics[metric_names()[i]] = r.values[i];
  j = {{"confusion", r.counts}, {"threshold", r.threshold}, {"n_boot", r.n_boot},
       {"seed", r.seed},        {"ci_level", 0.95},         {"metrics", metrics}};
}

void stats::to_json(nlohmann::json& j, const TTest& t) {
  j = {{"t", t.t}, {"p", t.p}, {"df", t.df}, {"mean_difference", t.mean_difference}};
}

void to_json(nlohmann::json& j, const TransferReport& r) {
  j = {{"n", r.n},
       {"mean_prob_original", r.mean_prob_original},
       {"mean_prob_plus", r.mean_prob_plus},
       {"mean_prob_minus", r.mean_prob_minus},
       {"plus_vs_original", r.plus_vs_original},
       {"minus_vs_original", r.minus_vs_original},
       {"fraction_plus_above_minus", r.fraction_plus_above_minus}};
}

namespace {
std::string cell(double v) {
  if (!std::isfinite(v)) return "";
  std::ostringstream s;
  s.precision(17);
  s << v;
  return s.str();
}
}  // namespace

std::string to_csv(const MetricReport& r) {
  std::ostringstream out;
  out << "metric,estimate,ci_low,ci_high\n";
  for (std::size_t i = 0; i < r.values.size(); ++i) {
    const auto& e = r.values[i];
    out << metric_names()[i] << ',' << cell(e.estimate) << ',' << cell(e.ci_low) << ',' << cell(e.ci_high) << '\n';
  }
  return out.str();
}

std::string to_csv(const TransferReport& r) {
  std::ostringstream out;
  out << "quantity,estimate,ci_low,ci_high,t,p,df\n";
  auto mean_row = [&](const char* name, const Estimate& e) {
    out << name << ',' << cell(e.estimate) << ',' << cell(e.ci_low) << ',' << cell(e.ci_high) << ",,,\n";
  };
  auto test_row = [&](const char* name, const stats::TTest& t) {
    out << name << ',' << cell(t.mean_difference) << ",,," << cell(t.t) << ',' << cell(t.p) << ',' << cell(t.df) << '\n';
  };
  mean_row("mean_prob_original", r.mean_prob_original);
  mean_row("mean_prob_plus", r.mean_prob_plus);
  mean_row("mean_prob_minus", r.mean_prob_minus);
  test_row("plus_vs_original", r.plus_vs_original);
  test_row("minus_vs_original", r.minus_vs_original);
  return out.str();
}

}  // namespace cfexplain
