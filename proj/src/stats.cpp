#include "cfexplain/stats.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include <boost/math/distributions/students_t.hpp>

#include "cfexplain/error.hpp"

namespace cfexplain::stats {

double mean(std::span<const double> v) {
  if (v.empty()) throw ArgumentError("mean of an empty sample");
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double stddev(std::span<const double> v, bool sample) {
  const std::size_t n = v.size();
  if (n < (sample ? 2u : 1u)) throw ArgumentError("standard deviation needs more observations");
  const double m = mean(v);
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  return std::sqrt(ss / static_cast<double>(sample ? n - 1 : n));
}

double pearson(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size() || a.size() < 2) throw ArgumentError("pearson: need two aligned samples of length >= 2");
  const double ma = mean(a), mb = mean(b);
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  if (saa == 0.0 || sbb == 0.0) return std::numeric_limits<double>::quiet_NaN();
  return std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
}

double quantile(std::vector<double> v, double q) {
  if (v.empty()) throw ArgumentError("quantile of an empty sample");
  std::sort(v.begin(), v.end());
  const double pos = std::clamp(q, 0.0, 1.0) * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(pos);
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

std::vector<double> midranks(std::span<const double> v) {
  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) { return v[i] < v[j]; });
  std::vector<double> ranks(v.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = r;
    i = j + 1;
  }
  return ranks;
}

double t_two_tailed_p(double t, double df) {
  if (!(df > 0.0)) throw NumericError("t distribution needs df > 0");
  if (std::isnan(t)) throw NumericError("t statistic is NaN");
  if (std::isinf(t)) return 0.0;
  const boost::math::students_t dist(df);
  return std::clamp(2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(t))), 0.0, 1.0);
}

double t_quantile(double prob, double df) {
  if (!(df > 0.0)) throw NumericError("t distribution needs df > 0");
  return boost::math::quantile(boost::math::students_t(df), prob);
}

TTest paired_t_test(std::span<const double> a, std::span<const double> b,
                    std::optional<double> df_override) {
  if (a.size() != b.size()) throw ArgumentError("paired t-test: samples differ in length");
  if (a.size() < 2) throw ArgumentError("paired t-test: need at least 2 pairs");
  std::vector<double> d(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) d[i] = a[i] - b[i];
  TTest r;
  r.df = df_override ? *df_override : static_cast<double>(d.size() - 1);
  r.mean_difference = mean(d);
  const double sd = stddev(d, true);
  if (sd == 0.0) {
    if (std::all_of(d.begin(), d.end(), [](double x) { return x == 0.0; })) return r;  // t = 0, p = 1
    throw NumericError("paired t-test: differences have zero variance");
  }
  r.t = r.mean_difference / (sd / std::sqrt(static_cast<double>(d.size())));
  r.p = t_two_tailed_p(r.t, r.df);
  return r;
}

TTest two_sample_t_test(std::span<const double> a, std::span<const double> b) {
  if (a.empty() || b.empty() || a.size() + b.size() < 3) {
    throw ArgumentError("two-sample t-test: need n_a + n_b >= 3 with both groups nonempty");
  }
  const double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
  const double ma = mean(a), mb = mean(b);
  double ss = 0.0;
  for (double x : a) ss += (x - ma) * (x - ma);
  for (double x : b) ss += (x - mb) * (x - mb);
  TTest r;
  r.df = na + nb - 2.0;
  r.mean_difference = ma - mb;
  const double pooled = ss / r.df;
  if (pooled == 0.0) {
    if (ma == mb) return r;
    throw NumericError("two-sample t-test: zero pooled variance");
  }
  r.t = r.mean_difference / std::sqrt(pooled * (1.0 / na + 1.0 / nb));
  r.p = t_two_tailed_p(r.t, r.df);
  return r;
}

Interval t_confidence_interval(std::span<const double> v) {
  const double m = mean(v);
  if (v.size() < 2) return {m, m};
  const double half = t_quantile(0.975, static_cast<double>(v.size() - 1)) * stddev(v, true) /
                      std::sqrt(static_cast<double>(v.size()));
  return {m - half, m + half};
}

}  // namespace cfexplain::stats
