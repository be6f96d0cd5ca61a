#include <cmath>
#include <random>
#include <set>

#include <gtest/gtest.h>

#include "cfexplain/error.hpp"
#include "cfexplain/studystats.hpp"

using namespace cfexplain;

namespace {

Response rec(const std::string& rater, const std::string& item, const std::string& method,
             const std::string& criterion, double score, const std::string& variant = "A") {
  return Response{rater, item, method, criterion, score, variant};
}

// Every rater scores every (item, method, criterion) with f(rater, item, method, criterion).
template <typename F>
ResponseTable full_table(int raters, int items, const std::vector<std::string>& methods, F f) {
  ResponseTable t;
  for (int r = 0; r < raters; ++r)
    for (int i = 0; i < items; ++i)
      for (std::size_t m = 0; m < methods.size(); ++m)
        for (int c = 0; c < 3; ++c)
          t.records.push_back(rec("r" + std::to_string(r), "i" + std::to_string(i), methods[m], kCriteria[c],
                                  f(r, i, static_cast<int>(m), c), r % 2 ? "B" : "A"));
  return t;
}

const CriterionComparison& criterion(const MethodComparison& mc, const std::string& name) {
  for (const auto& c : mc.criteria)
    if (c.criterion == name) return c;
  throw std::runtime_error("missing criterion");
}

const MethodSummary& method(const CriterionComparison& c, const std::string& name) {
  for (const auto& m : c.methods)
    if (m.method == name) return m;
  throw std::runtime_error("missing method");
}

}  // namespace

TEST(Csv, ParsesAndReportsLineNumbers) {
  const ResponseTable t = parse_responses_csv(
      "rater_id,item_id,method,criterion,score,variant\n"
      "r1,i1,ours,quality,3,A\n"
      "r1,i1,lrp,quality,-4,A\n");
  ASSERT_EQ(t.records.size(), 2u);
  EXPECT_EQ(t.records[1].score, -4);
  EXPECT_EQ(parse_responses_csv(to_csv(t)).records.size(), 2u);

  auto expect_line = [](const std::string& body, const std::string& line) {
    try {
      validate(parse_responses_csv("rater_id,item_id,method,criterion,score,variant\n" + body), true);
      FAIL() << body;
    } catch (const Error& e) {
      EXPECT_NE(std::string(e.what()).find(line), std::string::npos) << e.what();
    }
  };
  expect_line("r1,i1,ours,quality,x,A\n", "line 2");
  expect_line("r1,i1,ours,quality,1,A\nr1,i1,ours,quality\n", "line 3");
  EXPECT_THROW(parse_responses_csv(""), LoadError);
  EXPECT_THROW(parse_responses_csv("rater_id,item_id,method,criterion,score,variant\n"), LoadError);
}

TEST(Csv, ValidationRules) {
  ResponseTable t;
  t.records = {rec("r", "i", "m", "quality", 5)};
  EXPECT_THROW(validate(t, true), ArgumentError);
  t.records = {rec("r", "i", "m", "quality", 1.5)};
  EXPECT_THROW(validate(t, true), ArgumentError);
  EXPECT_NO_THROW(validate(t, false));
  t.records = {rec("r", "i", "m", "beauty", 1)};
  EXPECT_THROW(validate(t, true), ArgumentError);
  t.records = {rec("r", "i", "m", "quality", 1), rec("r", "i", "m", "quality", 2)};
  EXPECT_THROW(validate(t, true), ArgumentError);
}

TEST(Plan, PermutationsInvertAndVariantsDiffer) {
  const std::vector<std::string> items{"a", "b", "c", "d", "e"}, methods{"ours", "lrp", "dtd", "ig"};
  const QuestionnairePlan p = make_questionnaire_plan(items, methods, 2, 3);
  const QuestionnairePlan q = make_questionnaire_plan(items, methods, 2, 3);
  EXPECT_EQ(p.orders, q.orders);
  EXPECT_EQ(p.variants, (std::vector<std::string>{"A", "B"}));
  bool differ = false;
  for (int v = 0; v < 2; ++v)
    for (int i = 0; i < 5; ++i) {
      std::set<int> seen(p.orders[v][i].begin(), p.orders[v][i].end());
      EXPECT_EQ(seen.size(), methods.size());
      EXPECT_EQ(derandomize(p, v, i, randomize(p, v, i, methods)), methods);
      differ |= p.orders[0][i] != p.orders[1][i];
    }
  EXPECT_TRUE(differ);
  EXPECT_EQ(variant_for_rater(p, 0), "A");
  EXPECT_EQ(variant_for_rater(p, 3), "B");
}

TEST(Plan, TwoMethodsSingleItemStillDiffer) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto p = make_questionnaire_plan({"x"}, {"m1", "m2"}, 2, seed);
    EXPECT_NE(p.orders[0][0], p.orders[1][0]);
  }
}

TEST(Plan, RejectsBadInput) {
  EXPECT_THROW(make_questionnaire_plan({"a", "a"}, {"m", "n"}), ArgumentError);
  EXPECT_THROW(make_questionnaire_plan({"a"}, {"m"}), ArgumentError);
}

TEST(ZAdjust, HandExampleAndMoments) {
  ResponseTable t;
  t.records = {rec("r1", "i", "m", "quality", 1), rec("r2", "i", "m", "quality", 2),
               rec("r3", "i", "m", "quality", 3)};
  const ZAdjusted z = z_adjust(t);
  EXPECT_NEAR(z.table.records[0].score, -1.2247449, 1e-6);
  EXPECT_NEAR(z.table.records[1].score, 0.0, 1e-12);
  EXPECT_NEAR(z.table.records[2].score, 1.2247449, 1e-6);
  EXPECT_TRUE(z.warnings.empty());
}

TEST(ZAdjust, IdempotentAndShiftInvariant) {
  const ResponseTable t = generate_synthetic_responses(8, 6, {"a", "b", "c"}, 4);
  const ZAdjusted once = z_adjust(t);
  const ZAdjusted twice = z_adjust(once.table);
  ResponseTable shifted = t;
  for (auto& r : shifted.records)
    if (r.item_id == t.records[0].item_id) r.score += 2.0;
  const ZAdjusted sh = z_adjust(shifted);
  for (std::size_t k = 0; k < t.records.size(); ++k) {
    EXPECT_NEAR(twice.table.records[k].score, once.table.records[k].score, 1e-9);
    EXPECT_NEAR(sh.table.records[k].score, once.table.records[k].score, 1e-9);
  }
  // Group mean 0 and population SD 1.
  double s = 0, ss = 0;
  int n = 0;
  for (const auto& r : once.table.records)
    if (r.item_id == t.records[0].item_id && r.criterion == "quality") {
      s += r.score;
      ss += r.score * r.score;
      ++n;
    }
  EXPECT_NEAR(s / n, 0.0, 1e-9);
  EXPECT_NEAR(ss / n, 1.0, 1e-9);
}

TEST(ZAdjust, ZeroVarianceGroupWarns) {
  ResponseTable t;
  t.records = {rec("r1", "i", "m", "quality", 2), rec("r2", "i", "m", "quality", 2)};
  const ZAdjusted z = z_adjust(t);
  EXPECT_EQ(z.warnings.size(), 1u);
  EXPECT_EQ(z.table.records[0].score, 2.0);
}

TEST(Rho, IdenticalAndNegatedRaters) {
  auto same = full_table(4, 5, {"a", "b"}, [](int, int i, int m, int c) { return (i * 3 + m * 2 + c) % 9 - 4; });
  EXPECT_NEAR(interobserver_rho(same, "quality").rho, 1.0, 1e-12);
  auto neg = full_table(2, 5, {"a", "b"}, [](int r, int i, int m, int) {
    const double v = (i * 3 + m * 5) % 9 - 4;
    return r == 0 ? v : -v;
  });
  const RhoResult r = interobserver_rho(neg, "semantics");
  EXPECT_NEAR(r.rho, -1.0, 1e-12);
  EXPECT_EQ(r.pairs_used, 1);
}

TEST(Rho, AffineInvariancePerRater) {
  const ResponseTable t = generate_synthetic_responses(6, 8, {"a", "b", "c"}, 9);
  ResponseTable scaled = t;
  for (auto& r : scaled.records) {
    const int k = r.rater_id.back() - '0';
    r.score = (1.0 + k) * r.score + 3.0 * k - 1.0;
  }
  for (const auto& c : kCriteria) {
    EXPECT_NEAR(interobserver_rho(scaled, c).rho, interobserver_rho(t, c).rho, 1e-12);
  }
}

TEST(Rho, ConstantRaterExcluded) {
  auto t = full_table(3, 4, {"a", "b"}, [](int r, int i, int m, int) { return r == 2 ? 1 : (i + m) % 5 - 2; });
  const RhoResult r = interobserver_rho(t, "quality");
  EXPECT_EQ(r.pairs_used, 1);
  EXPECT_EQ(r.warnings.size(), 2u);
  EXPECT_NEAR(r.rho, 1.0, 1e-12);
}

TEST(MethodComparison, DominantMethodRanksFirst) {
  auto t = full_table(4, 6, {"a", "b"}, [](int r, int i, int m, int) { return m == 0 ? 2 + (r * i) % 3 : -1 - (i % 3); });
  const MethodComparison mc = method_comparison(t);
  EXPECT_EQ(mc.n_raters, 4);
  for (const auto& c : mc.criteria) {
    EXPECT_EQ(c.best_method, "a");
    EXPECT_DOUBLE_EQ(method(c, "a").mean_rank, 1.0);
    EXPECT_DOUBLE_EQ(method(c, "b").mean_rank, 2.0);
    ASSERT_EQ(c.tests.size(), 1u);
    EXPECT_EQ(c.tests[0].test.df, 2);
    EXPECT_GT(c.tests[0].test.t, 0);
  }
}

TEST(MethodComparison, SingleMethodHasNoTests) {
  auto t = full_table(3, 3, {"only"}, [](int r, int i, int, int) { return (r + i) % 3; });
  const MethodComparison mc = method_comparison(t);
  for (const auto& c : mc.criteria) {
    EXPECT_DOUBLE_EQ(c.methods[0].mean_rank, 1.0);
    EXPECT_TRUE(c.tests.empty());
  }
}

TEST(MethodComparison, RanksSumWithTies) {
  const ResponseTable t = generate_synthetic_responses(7, 10, {"a", "b", "c", "d"}, 1);
  const MethodComparison mc = method_comparison(t);
  for (const auto& c : mc.criteria) {
    double sum = 0;
    for (const auto& m : c.methods) sum += m.mean_rank;
    EXPECT_NEAR(sum, 4 * 5 / 2.0, 1e-9);
  }
}

TEST(MethodComparison, MeansAndExclusion) {
  auto t = full_table(3, 2, {"a", "b"}, [](int r, int i, int m, int) { return m == 0 ? r + i : -r; });
  // rater r0 in item i0 misses method b for quality, so a's record there is dropped
  std::erase_if(t.records, [](const Response& x) {
    return x.rater_id == "r0" && x.item_id == "i0" && x.method == "b" && x.criterion == "quality";
  });
  const MethodComparison mc = method_comparison(t);
  EXPECT_EQ(mc.excluded_records, 1);
  const auto& q = criterion(mc, "quality");
  // Per-rater means for a: r0 = 1 (i1 only), r1 = 1.5, r2 = 2.5.
  EXPECT_NEAR(method(q, "a").raw_mean, (1.0 + 1.5 + 2.5) / 3, 1e-12);
  const auto& s = criterion(mc, "semantics");
  EXPECT_NEAR(method(s, "a").raw_mean, (0.5 + 1.5 + 2.5) / 3, 1e-12);
  EXPECT_LE(method(s, "a").raw_ci.low, method(s, "a").raw_mean);
  EXPECT_THROW(method_comparison(full_table(2, 2, {"a", "b"}, [](int, int, int, int) { return 0; })),
               ArgumentError);
}

TEST(Kmo, IndependentVariablesNearHalf) {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> z;
  Eigen::MatrixXd d(5000, 3);
  for (int i = 0; i < d.rows(); ++i)
    for (int j = 0; j < 3; ++j) d(i, j) = z(rng);
  const double k = kmo(d);
  EXPECT_NEAR(k, 0.5, 0.1);
  EXPECT_GE(k, 0.0);
  EXPECT_LE(k, 1.0);
}

TEST(Kmo, CorrelatedVariablesAreAdequate) {
  std::mt19937_64 rng(2);
  std::normal_distribution<double> z;
  Eigen::MatrixXd d(2000, 3);
  for (int i = 0; i < d.rows(); ++i) {
    const double g = z(rng);
    for (int j = 0; j < 3; ++j) d(i, j) = g + 0.6 * z(rng);
  }
  EXPECT_GT(kmo(d), 0.7);
  Eigen::MatrixXd singular(10, 3);
  for (int i = 0; i < 10; ++i) singular.row(i) << i, 2 * i, (i * i) % 7;
  EXPECT_THROW(kmo(singular), NumericError);
}

TEST(GeneralFactor, PerfectCorrelationAndSums) {
  Eigen::MatrixXd d(6, 3);
  for (int i = 0; i < 6; ++i) d.row(i) << i, 2 * i + 1, -0.5 + 3 * i;
  const GeneralFactor g = general_factor(d);
  EXPECT_NEAR(g.explained_fraction, 1.0, 1e-9);
  for (double l : g.l1_loadings) EXPECT_NEAR(l, 1.0 / 3.0, 1e-9);

  std::mt19937_64 rng(3);
  std::normal_distribution<double> z;
  Eigen::MatrixXd e(300, 3);
  for (int i = 0; i < e.rows(); ++i) {
    const double f = z(rng);
    e.row(i) << f + 0.5 * z(rng), f + 0.4 * z(rng), f + 0.9 * z(rng);
  }
  const GeneralFactor h = general_factor(e);
  double total = 0, l1 = 0;
  for (double v : h.explained_all) total += v;
  for (double v : h.l1_loadings) l1 += std::abs(v);
  EXPECT_NEAR(total, 1.0, 1e-12);
  EXPECT_NEAR(l1, 1.0, 1e-12);
  EXPECT_DOUBLE_EQ(h.explained_fraction, h.explained_all[0]);
  // Noisiest variable loads least.
  EXPECT_LT(h.l1_loadings[2], h.l1_loadings[0]);

  // Column order does not change the explained fraction.
  Eigen::MatrixXd p(300, 3);
  p << e.col(2), e.col(0), e.col(1);
  EXPECT_NEAR(general_factor(p).explained_fraction, h.explained_fraction, 1e-12);
  // Published L1 loadings are normalized.
  EXPECT_NEAR(0.358 + 0.367 + 0.274, 1.0, 2e-3);
}

TEST(GeneralFactor, RejectsDegenerateInput) {
  Eigen::MatrixXd c(5, 3);
  for (int i = 0; i < 5; ++i) c.row(i) << i, 1.0, -i;
  EXPECT_THROW(general_factor(c), NumericError);
  EXPECT_THROW(general_factor(Eigen::MatrixXd::Random(2, 3)), NumericError);
}

TEST(OrderEffect, SymmetricUnderVariantSwap) {
  const ResponseTable t = generate_synthetic_responses(10, 6, {"a", "b"}, 5);
  ResponseTable swapped = t;
  for (auto& r : swapped.records) r.variant = r.variant == "A" ? "B" : "A";
  const auto e = order_effect_test(t), f = order_effect_test(swapped);
  ASSERT_EQ(e.size(), 6u);
  for (std::size_t k = 0; k < e.size(); ++k) {
    EXPECT_NEAR(std::abs(e[k].test.t), std::abs(f[k].test.t), 1e-12);
    EXPECT_NEAR(e[k].test.p, f[k].test.p, 1e-12);
    EXPECT_EQ(e[k].test.df, e[k].n_a + e[k].n_b - 2);
  }
}

TEST(OrderEffect, IdenticalVariantsGivePOne) {
  // Odd raters copy the preceding even rater's answers.
  auto t = full_table(6, 4, {"a", "b"}, [](int r, int i, int m, int c) { return ((r / 2) * 7 + i * 3 + m + c) % 9 - 4; });
  for (const auto& e : order_effect_test(t)) EXPECT_NEAR(e.test.p, 1.0, 1e-12);
  ResponseTable only_a = t;
  for (auto& r : only_a.records) r.variant = "A";
  EXPECT_THROW(order_effect_test(only_a), ArgumentError);
}

TEST(Report, SyntheticStudyEndToEnd) {
  const ResponseTable t = generate_synthetic_responses(8, 12, {"ours", "lrp", "dtd"}, 2);
  validate(t, true);
  const nlohmann::json r = study_report(t);
  for (const char* key : {"summary", "raw_means", "z_means", "mean_ranks", "method_tests", "interobserver_rho",
                          "kmo", "general_factor", "order_effects", "warnings"}) {
    EXPECT_TRUE(r.contains(key)) << key;
  }
  const MethodComparison mc = method_comparison(t);
  for (const auto& c : mc.criteria) EXPECT_EQ(c.best_method, "ours");
  EXPECT_FALSE(study_summary_text(r).empty());
  EXPECT_EQ(study_report(t).dump(), r.dump());
}
