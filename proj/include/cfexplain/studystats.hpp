// User-study analysis: questionnaire planning, per-group z adjustment,
// inter-observer agreement, method comparison, sampling adequacy and the
// general preference factor.
#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "cfexplain/stats.hpp"
#include "json.hpp"

namespace cfexplain {

inline const std::array<std::string, 3> kCriteria{"intuitivity", "semantics", "quality"};
constexpr int kMinScore = -4;
constexpr int kMaxScore = 4;

struct Response {
  std::string rater_id;
  std::string item_id;
  std::string method;
  std::string criterion;
  /// Integral in [−4, 4] for raw answers; real after z adjustment.
  double score = 0.0;
  std::string variant;
};

struct ResponseTable {
  std::vector<Response> records;
};

/// Header `rater_id,item_id,method,criterion,score,variant`. Errors name the
/// 1-based line. A table without data rows is an error.
ResponseTable parse_responses_csv(const std::string& text, const std::string& source = "responses");
ResponseTable read_responses_csv(const std::filesystem::path& path);
std::string to_csv(const ResponseTable& table);

/// Unique (rater, item, method, criterion); known criterion; variant
/// nonempty; with `raw`, integral scores within [−4, 4].
void validate(const ResponseTable& table, bool raw);

/// Sorted distinct values of one column.
std::vector<std::string> raters_of(const ResponseTable& t);
std::vector<std::string> items_of(const ResponseTable& t);
std::vector<std::string> methods_of(const ResponseTable& t);

struct QuestionnairePlan {
  std::vector<std::string> items;
  std::vector<std::string> methods;
  std::vector<std::string> variants;  // "A", "B", ...
  /// orders[v][i][pos]: index into `methods` shown at position pos of item i
  /// in variant v.
  std::vector<std::vector<std::vector<int>>> orders;
  std::uint64_t seed = 0;
};

/// Seeded per-item permutations for each variant. When every variant would
/// coincide with the first, the first item of each later variant is rotated
/// so the variants differ.
QuestionnairePlan make_questionnaire_plan(const std::vector<std::string>& items,
                                          const std::vector<std::string>& methods,
                                          int n_variants = 2, std::uint64_t seed = 0);

/// key[m] = display position of method m for (variant, item).
std::vector<int> derandomization_key(const QuestionnairePlan& plan, int variant, int item);

/// Canonical (method-ordered) values → display order, and back.
template <typename T>
std::vector<T> randomize(const QuestionnairePlan& plan, int variant, int item,
                         const std::vector<T>& canonical) {
  const auto& order = plan.orders.at(variant).at(item);
  std::vector<T> out;
  out.reserve(order.size());
  for (int m : order) out.push_back(canonical.at(m));
  return out;
}

template <typename T>
std::vector<T> derandomize(const QuestionnairePlan& plan, int variant, int item,
                           const std::vector<T>& displayed) {
  const auto key = derandomization_key(plan, variant, item);
  std::vector<T> out;
  out.reserve(key.size());
  for (int pos : key) out.push_back(displayed.at(pos));
  return out;
}

/// Assigns raters to variants round-robin.
const std::string& variant_for_rater(const QuestionnairePlan& plan, int rater_index);

struct ZAdjusted {
  ResponseTable table;
  /// One entry per zero-variance (item, criterion) group left unadjusted.
  std::vector<std::string> warnings;
};

/// Within each (item, criterion) group: (score − mean) / population SD.
ZAdjusted z_adjust(const ResponseTable& table);

struct RhoResult {
  std::string criterion;
  double rho = 0.0;
  int pairs_used = 0;
  std::vector<std::string> warnings;
};

/// Mean Pearson r over all rater pairs; each rater's vector lists the scores
/// of the given criterion over the (item, method) cells answered by every
/// rater. Pairs involving a constant vector are excluded with a warning.
RhoResult interobserver_rho(const ResponseTable& table, const std::string& criterion);

struct MethodSummary {
  std::string method;
  double raw_mean = 0.0;
  stats::Interval raw_ci;
  double z_mean = 0.0;
  stats::Interval z_ci;
  double mean_rank = 0.0;
};

struct MethodTest {
  std::string method;  // compared against the best method
  stats::TTest test;
  bool degenerate = false;
};

struct CriterionComparison {
  std::string criterion;
  std::vector<MethodSummary> methods;
  std::string best_method;
  std::vector<MethodTest> tests;
};

struct MethodComparison {
  std::vector<CriterionComparison> criteria;
  int n_raters = 0;
  /// Records dropped because a (rater, item, criterion) cell lacked a method.
  long excluded_records = 0;
};

/// Per criterion and method: means of per-rater mean scores (raw and z
/// adjusted) with t intervals, average midrank (1 = best) over
/// (rater, item) cells, and two-tailed paired t-tests of the best method
/// (highest raw mean) against each other method on per-rater means with
/// df = N − 2.
MethodComparison method_comparison(const ResponseTable& table);

/// Observations × variables; one row per (rater, item, method) that has all
/// three criteria, columns in kCriteria order.
Eigen::MatrixXd criterion_matrix(const ResponseTable& table);

/// Kaiser-Meyer-Olkin sampling adequacy. Throws NumericError when the
/// correlation matrix is not positive definite.
double kmo(const Eigen::MatrixXd& data);

struct GeneralFactor {
  double explained_fraction = 0.0;
  /// λ_k / Σλ for every component, descending.
  std::vector<double> explained_all;
  /// First eigenvector of the correlation matrix, sign fixed so that the
  /// mean loading is positive.
  std::vector<double> loadings;
  /// loadings / Σ|loadings|.
  std::vector<double> l1_loadings;
};

/// First principal component of the standardized variables. Throws
/// NumericError for a constant variable or fewer than 3 observations.
GeneralFactor general_factor(const Eigen::MatrixXd& data);

struct OrderEffect {
  std::string method;
  std::string criterion;
  int n_a = 0;
  int n_b = 0;
  stats::TTest test;
  bool degenerate = false;
};

/// Per method and criterion, pooled two-sample t-test between per-rater mean
/// scores of the first two variants (sorted by name). Throws ArgumentError
/// unless both are present or when a rater answers in two variants.
std::vector<OrderEffect> order_effect_test(const ResponseTable& table);

/// Full analysis of a raw response table as one JSON document.
nlohmann::json study_report(const ResponseTable& table);
/// Plain-text digest of a study report.
std::string study_summary_text(const nlohmann::json& report);

/// Questionnaire-shaped synthetic answers with a per-method effect, per-item
/// difficulty and rater noise; raters alternate between variants A and B.
ResponseTable generate_synthetic_responses(int n_raters, int n_items,
                                           const std::vector<std::string>& methods,
                                           std::uint64_t seed);

void to_json(nlohmann::json& j, const QuestionnairePlan& p);

}  // namespace cfexplain
