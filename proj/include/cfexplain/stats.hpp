// Small statistics toolkit shared by the metric and user-study analyses.
#pragma once

#include <optional>
#include <span>
#include <vector>

namespace cfexplain::stats {

double mean(std::span<const double> v);
/// Population (divide by n) or sample (divide by n−1) standard deviation.
double stddev(std::span<const double> v, bool sample);
/// Pearson product-moment correlation; NaN when either input is constant.
double pearson(std::span<const double> a, std::span<const double> b);
/// Linear interpolation between order statistics (q in [0,1]); input need
/// not be sorted.
double quantile(std::vector<double> v, double q);
/// 1-based ranks in ascending order, ties sharing their mean rank.
std::vector<double> midranks(std::span<const double> v);

/// Two-tailed p for a t statistic.
double t_two_tailed_p(double t, double df);
/// Upper quantile of Student's t: P(T ≤ q) = prob.
double t_quantile(double prob, double df);

struct TTest {
  double t = 0.0;
  double p = 1.0;
  double df = 0.0;
  double mean_difference = 0.0;
};

/// Paired two-tailed t-test on a − b. df = n − 1 unless overridden. All
/// differences exactly zero gives t = 0, p = 1; any other zero-variance
/// difference vector throws NumericError.
TTest paired_t_test(std::span<const double> a, std::span<const double> b,
                    std::optional<double> df_override = std::nullopt);

/// Two-sample t-test with pooled variance, df = n_a + n_b − 2. Identical
/// constant groups give t = 0, p = 1; other zero pooled variance throws.
TTest two_sample_t_test(std::span<const double> a, std::span<const double> b);

struct Interval {
  double low = 0.0;
  double high = 0.0;
};

/// mean ± t(0.975, n−1)·s/√n.
Interval t_confidence_interval(std::span<const double> v);

}  // namespace cfexplain::stats
