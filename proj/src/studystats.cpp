#include "cfexplain/studystats.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <tuple>

#include "cfexplain/error.hpp"
#include "cfexplain/io.hpp"
#include "cfexplain/models.hpp"
#include "cfexplain/nn/layers.hpp"

namespace cfexplain {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::vector<std::string> split_line(const std::string& line) {
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

bool known_criterion(const std::string& c) {
  return std::find(kCriteria.begin(), kCriteria.end(), c) != kCriteria.end();
}

template <typename F>
std::vector<std::string> distinct(const ResponseTable& t, F field) {
  std::set<std::string> s;
  for (const auto& r : t.records) s.insert(field(r));
  return {s.begin(), s.end()};
}

std::string number_text(double v) {
  std::ostringstream s;
  s << std::setprecision(17) << v;
  return s.str();
}

}  // namespace

std::vector<std::string> raters_of(const ResponseTable& t) {
  return distinct(t, [](const Response& r) { return r.rater_id; });
}
std::vector<std::string> items_of(const ResponseTable& t) {
  return distinct(t, [](const Response& r) { return r.item_id; });
}
std::vector<std::string> methods_of(const ResponseTable& t) {
  return distinct(t, [](const Response& r) { return r.method; });
}

ResponseTable parse_responses_csv(const std::string& text, const std::string& source) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw LoadError(source + ": empty file");
  const std::vector<std::string> header{"rater_id", "item_id", "method", "criterion", "score", "variant"};
  if (split_line(line) != header) {
    throw LoadError(source + " line 1: header must be rater_id,item_id,method,criterion,score,variant");
  }
  ResponseTable t;
  std::set<std::tuple<std::string, std::string, std::string, std::string>> seen;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    const std::string where = source + " line " + std::to_string(lineno);
    const auto c = split_line(line);
    if (c.size() != 6) throw LoadError(where + ": expected 6 columns, got " + std::to_string(c.size()));
    Response r{c[0], c[1], c[2], c[3], 0.0, c[5]};
    if (r.rater_id.empty() || r.item_id.empty() || r.method.empty()) {
      throw LoadError(where + ": rater_id, item_id and method must be nonempty");
    }
    if (!known_criterion(r.criterion)) {
      throw LoadError(where + ": criterion must be intuitivity, semantics or quality");
    }
    int score = 0;
    try {
      std::size_t used = 0;
      score = std::stoi(c[4], &used);
      if (used != c[4].size()) throw std::invalid_argument(c[4]);
    } catch (const std::exception&) {
      throw LoadError(where + ": score must be an integer, got '" + c[4] + "'");
    }
    if (score < kMinScore || score > kMaxScore) throw LoadError(where + ": score outside [-4,4]");
    r.score = score;
    if (r.variant != "A" && r.variant != "B") throw LoadError(where + ": variant must be A or B");
    if (!seen.insert({r.rater_id, r.item_id, r.method, r.criterion}).second) {
      throw LoadError(where + ": duplicate (rater, item, method, criterion)");
    }
    t.records.push_back(std::move(r));
  }
  if (t.records.empty()) throw LoadError(source + ": no responses");
  return t;
}

ResponseTable read_responses_csv(const std::filesystem::path& path) {
  try {
    return parse_responses_csv(io::read_file(path), path.string());
  } catch (const LoadError&) {
    throw;
  } catch (const Error& e) {
    throw LoadError(e.what());
  }
}

std::string to_csv(const ResponseTable& table) {
  std::ostringstream out;
  out << "rater_id,item_id,method,criterion,score,variant\n";
  for (const auto& r : table.records) {
    out << r.rater_id << ',' << r.item_id << ',' << r.method << ',' << r.criterion << ','
        << number_text(r.score) << ',' << r.variant << '\n';
  }
  return out.str();
}

void validate(const ResponseTable& table, bool raw) {
  std::set<std::tuple<std::string, std::string, std::string, std::string>> seen;
  for (std::size_t i = 0; i < table.records.size(); ++i) {
    const auto& r = table.records[i];
    const std::string where = "response " + std::to_string(i);
    if (!known_criterion(r.criterion)) throw ArgumentError(where + ": unknown criterion '" + r.criterion + "'");
    if (r.variant.empty()) throw ArgumentError(where + ": empty variant");
    if (!std::isfinite(r.score)) throw ArgumentError(where + ": non-finite score");
    if (raw && (r.score != std::round(r.score) || r.score < kMinScore || r.score > kMaxScore)) {
      throw ArgumentError(where + ": score must be an integer in [-4,4]");
    }
    if (!seen.insert({r.rater_id, r.item_id, r.method, r.criterion}).second) {
      throw ArgumentError(where + ": duplicate (rater, item, method, criterion)");
    }
  }
}

// ---------------------------------------------------------------------------
// Questionnaire plans

QuestionnairePlan make_questionnaire_plan(const std::vector<std::string>& items,
                                          const std::vector<std::string>& methods, int n_variants,
                                          std::uint64_t seed) {
  if (methods.size() < 2) throw ArgumentError("questionnaire plan needs at least 2 methods");
  if (items.empty()) throw ArgumentError("questionnaire plan needs at least 1 item");
  if (n_variants < 1 || n_variants > 26) throw ArgumentError("n_variants must be in [1,26]");
  if (std::set<std::string>(items.begin(), items.end()).size() != items.size()) {
    throw ArgumentError("questionnaire plan: duplicate item ids");
  }
  if (std::set<std::string>(methods.begin(), methods.end()).size() != methods.size()) {
    throw ArgumentError("questionnaire plan: duplicate method names");
  }
  QuestionnairePlan plan{items, methods, {}, {}, seed};
  const int m = static_cast<int>(methods.size());
  for (int v = 0; v < n_variants; ++v) {
    plan.variants.push_back(std::string(1, static_cast<char>('A' + v)));
    std::mt19937_64 rng(derive_seed(seed, static_cast<std::uint64_t>(v)));
    std::vector<std::vector<int>> per_item;
    for (std::size_t i = 0; i < items.size(); ++i) {
      std::vector<int> order(m);
      std::iota(order.begin(), order.end(), 0);
      for (int k = m; k > 1; --k) {
        std::swap(order[k - 1], order[static_cast<int>(nn::uniform01(rng) * k)]);
      }
      per_item.push_back(std::move(order));
    }
    if (v > 0 && per_item == plan.orders[0]) {
      std::rotate(per_item[0].begin(), per_item[0].begin() + 1, per_item[0].end());
    }
    plan.orders.push_back(std::move(per_item));
  }
  return plan;
}

std::vector<int> derandomization_key(const QuestionnairePlan& plan, int variant, int item) {
  const auto& order = plan.orders.at(variant).at(item);
  std::vector<int> key(order.size());
  for (std::size_t pos = 0; pos < order.size(); ++pos) key[order[pos]] = static_cast<int>(pos);
  return key;
}

const std::string& variant_for_rater(const QuestionnairePlan& plan, int rater_index) {
  if (plan.variants.empty() || rater_index < 0) throw ArgumentError("variant_for_rater: bad arguments");
  return plan.variants[rater_index % plan.variants.size()];
}

void to_json(nlohmann::json& j, const QuestionnairePlan& p) {
  nlohmann::json variants = nlohmann::json::array();
  for (std::size_t v = 0; v < p.variants.size(); ++v) {
    nlohmann::json items = nlohmann::json::array();
    for (std::size_t i = 0; i < p.items.size(); ++i) {
      std::vector<std::string> shown;
      for (int m : p.orders[v][i]) shown.push_back(p.methods[m]);
      items.push_back({{"item_id", p.items[i]},
                       {"display_order", shown},
                       {"key", derandomization_key(p, static_cast<int>(v), static_cast<int>(i))}});
    }
    variants.push_back({{"variant", p.variants[v]}, {"items", items}});
  }
  j = {{"seed", p.seed}, {"methods", p.methods}, {"variants", variants}};
}

// ---------------------------------------------------------------------------
// Adjustment and agreement

ZAdjusted z_adjust(const ResponseTable& table) {
  ZAdjusted out{table, {}};
  std::map<std::pair<std::string, std::string>, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < table.records.size(); ++i) {
    const auto& r = table.records[i];
    groups[{r.item_id, r.criterion}].push_back(i);
  }
  for (const auto& [key, idx] : groups) {
    std::vector<double> v;
    for (std::size_t i : idx) v.push_back(table.records[i].score);
    const double m = stats::mean(v);
    const double sd = stats::stddev(v, false);
    if (!(sd > 1e-12)) {
      out.warnings.push_back("item " + key.first + " / " + key.second +
                             ": zero variance, left unadjusted");
      continue;
    }
    for (std::size_t i : idx) out.table.records[i].score = (table.records[i].score - m) / sd;
  }
  return out;
}

RhoResult interobserver_rho(const ResponseTable& table, const std::string& criterion) {
  if (!known_criterion(criterion)) throw ArgumentError("unknown criterion '" + criterion + "'");
  RhoResult res;
  res.criterion = criterion;
  std::map<std::string, std::map<std::pair<std::string, std::string>, double>> by_rater;
  for (const auto& r : table.records) {
    if (r.criterion == criterion) by_rater[r.rater_id][{r.item_id, r.method}] = r.score;
  }
  if (by_rater.size() < 2) throw ArgumentError("interobserver_rho: need at least 2 raters");
  // Cells answered by every rater.
  std::vector<std::pair<std::string, std::string>> cells;
  for (const auto& [cell, _] : by_rater.begin()->second) {
    bool all = true;
    for (const auto& [rater, answers] : by_rater) all = all && answers.count(cell);
    if (all) cells.push_back(cell);
  }
  if (cells.size() < 2) throw ArgumentError("interobserver_rho: fewer than 2 cells answered by all raters");
  std::vector<std::string> raters;
  std::vector<std::vector<double>> q;
  for (const auto& [rater, answers] : by_rater) {
    raters.push_back(rater);
    std::vector<double> v;
    for (const auto& c : cells) v.push_back(answers.at(c));
    q.push_back(std::move(v));
  }
  double sum = 0.0;
  for (std::size_t i = 0; i < q.size(); ++i) {
    for (std::size_t j = i + 1; j < q.size(); ++j) {
      const double r = stats::pearson(q[i], q[j]);
      if (std::isnan(r)) {
        res.warnings.push_back("raters " + raters[i] + " and " + raters[j] + ": constant answers, pair excluded");
        continue;
      }
      sum += r;
      ++res.pairs_used;
    }
  }
  if (res.pairs_used == 0) throw NumericError("interobserver_rho: no usable rater pair");
  res.rho = sum / res.pairs_used;
  return res;
}

// ---------------------------------------------------------------------------
// Method comparison

namespace {

using CellKey = std::pair<std::string, std::string>;  // rater, item

struct CriterionCells {
  // cell → method index → score
  std::map<CellKey, std::vector<double>> complete;
  long excluded = 0;
};

CriterionCells complete_cells(const ResponseTable& t, const std::string& criterion,
                              const std::vector<std::string>& methods) {
  std::map<CellKey, std::map<std::string, double>> cells;
  for (const auto& r : t.records) {
    if (r.criterion == criterion) cells[{r.rater_id, r.item_id}][r.method] = r.score;
  }
  CriterionCells out;
  for (const auto& [key, by_method] : cells) {
    if (by_method.size() != methods.size()) {
      out.excluded += static_cast<long>(by_method.size());
      continue;
    }
    std::vector<double> v;
    for (const auto& m : methods) v.push_back(by_method.at(m));
    out.complete[key] = std::move(v);
  }
  return out;
}

// Per-rater mean score of each method, raters in sorted order.
std::vector<std::vector<double>> rater_means(const CriterionCells& cells, std::size_t n_methods,
                                             std::vector<std::string>* raters_out = nullptr) {
  std::map<std::string, std::pair<std::vector<double>, int>> acc;
  for (const auto& [key, v] : cells.complete) {
    auto& [sum, count] = acc[key.first];
    if (sum.empty()) sum.assign(n_methods, 0.0);
    for (std::size_t m = 0; m < n_methods; ++m) sum[m] += v[m];
    ++count;
  }
  std::vector<std::vector<double>> per_method(n_methods);
  for (const auto& [rater, sc] : acc) {
    if (raters_out) raters_out->push_back(rater);
    for (std::size_t m = 0; m < n_methods; ++m) per_method[m].push_back(sc.first[m] / sc.second);
  }
  return per_method;
}

}  // namespace

MethodComparison method_comparison(const ResponseTable& table) {
  validate(table, false);
  const auto methods = methods_of(table);
  if (methods.empty()) throw ArgumentError("method_comparison: empty table");
  const ResponseTable z = z_adjust(table).table;
  MethodComparison out;
  out.n_raters = static_cast<int>(raters_of(table).size());
  for (const auto& criterion : kCriteria) {
    const CriterionCells raw_cells = complete_cells(table, criterion, methods);
    const CriterionCells z_cells = complete_cells(z, criterion, methods);
    out.excluded_records += raw_cells.excluded;
    if (raw_cells.complete.empty()) continue;
    const auto raw = rater_means(raw_cells, methods.size());
    const auto zm = rater_means(z_cells, methods.size());
    const std::size_t n_raters = raw[0].size();
    if (methods.size() >= 2 && n_raters < 3) {
      throw ArgumentError("method_comparison: need at least 3 raters with complete answers");
    }

    std::vector<double> rank_sum(methods.size(), 0.0);
    for (const auto& [key, v] : raw_cells.complete) {
      std::vector<double> neg(v.size());
      std::transform(v.begin(), v.end(), neg.begin(), [](double s) { return -s; });
      const auto r = stats::midranks(neg);
      for (std::size_t m = 0; m < methods.size(); ++m) rank_sum[m] += r[m];
    }

    CriterionComparison cc;
    cc.criterion = criterion;
    std::size_t best = 0;
    for (std::size_t m = 0; m < methods.size(); ++m) {
      MethodSummary s;
      s.method = methods[m];
      s.raw_mean = stats::mean(raw[m]);
      s.raw_ci = stats::t_confidence_interval(raw[m]);
      s.z_mean = stats::mean(zm[m]);
      s.z_ci = stats::t_confidence_interval(zm[m]);
      s.mean_rank = rank_sum[m] / static_cast<double>(raw_cells.complete.size());
      cc.methods.push_back(s);
    }
    for (std::size_t m = 1; m < methods.size(); ++m) {
      if (cc.methods[m].raw_mean > cc.methods[best].raw_mean) best = m;
    }
    cc.best_method = methods[best];
    for (std::size_t m = 0; m < methods.size(); ++m) {
      if (m == best) continue;
      MethodTest t;
      t.method = methods[m];
      try {
        t.test = stats::paired_t_test(raw[best], raw[m], static_cast<double>(n_raters) - 2.0);
      } catch (const NumericError&) {
        t.degenerate = true;
        t.test.t = t.test.p = kNaN;
        t.test.df = static_cast<double>(n_raters) - 2.0;
      }
      cc.tests.push_back(t);
    }
    out.criteria.push_back(std::move(cc));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Factor analysis

Eigen::MatrixXd criterion_matrix(const ResponseTable& table) {
  std::map<std::tuple<std::string, std::string, std::string>, std::array<double, 3>> rows;
  std::map<std::tuple<std::string, std::string, std::string>, int> counts;
  for (const auto& r : table.records) {
    const auto k = std::find(kCriteria.begin(), kCriteria.end(), r.criterion) - kCriteria.begin();
    if (k >= 3) continue;
    const auto key = std::make_tuple(r.rater_id, r.item_id, r.method);
    rows[key][k] = r.score;
    counts[key] |= 1 << k;
  }
  std::vector<std::array<double, 3>> full;
  for (const auto& [key, v] : rows) {
    if (counts[key] == 7) full.push_back(v);
  }
  Eigen::MatrixXd m(static_cast<Eigen::Index>(full.size()), 3);
  for (std::size_t i = 0; i < full.size(); ++i) {
    for (int k = 0; k < 3; ++k) m(static_cast<Eigen::Index>(i), k) = full[i][k];
  }
  return m;
}

namespace {

Eigen::MatrixXd correlation(const Eigen::MatrixXd& data, const char* who) {
  if (data.rows() < 3) throw NumericError(std::string(who) + ": need at least 3 observations");
  Eigen::MatrixXd centered = data.rowwise() - data.colwise().mean();
  Eigen::VectorXd sd = (centered.colwise().squaredNorm() / static_cast<double>(data.rows())).cwiseSqrt();
  for (Eigen::Index k = 0; k < sd.size(); ++k) {
    if (!(sd(k) > 1e-12)) {
      throw NumericError(std::string(who) + ": variable " + std::to_string(k) + " is constant");
    }
  }
  Eigen::MatrixXd z = centered.array().rowwise() / sd.transpose().array();
  Eigen::MatrixXd r = (z.transpose() * z) / static_cast<double>(data.rows());
  for (Eigen::Index k = 0; k < r.rows(); ++k) r(k, k) = 1.0;
  return r;
}

}  // namespace

double kmo(const Eigen::MatrixXd& data) {
  if (data.cols() < 3) throw ArgumentError("kmo: need at least 3 variables");
  const Eigen::MatrixXd r = correlation(data, "kmo");
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(r);
  if (eig.info() != Eigen::Success || eig.eigenvalues().minCoeff() < 1e-10) {
    throw NumericError("kmo: correlation matrix is singular or not positive definite");
  }
  const Eigen::MatrixXd inv = r.inverse();
  double r2 = 0.0, p2 = 0.0;
  for (Eigen::Index i = 0; i < r.rows(); ++i) {
    for (Eigen::Index j = 0; j < r.cols(); ++j) {
      if (i == j) continue;
      const double partial = -inv(i, j) / std::sqrt(inv(i, i) * inv(j, j));
      r2 += r(i, j) * r(i, j);
      p2 += partial * partial;
    }
  }
  if (r2 + p2 == 0.0) throw NumericError("kmo: all correlations are zero");
  return r2 / (r2 + p2);
}

GeneralFactor general_factor(const Eigen::MatrixXd& data) {
  if (data.cols() < 2) throw ArgumentError("general_factor: need at least 2 variables");
  const Eigen::MatrixXd r = correlation(data, "general_factor");
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(r);
  if (eig.info() != Eigen::Success) throw NumericError("general_factor: eigen decomposition failed");
  const Eigen::Index p = r.rows();
  // Eigen returns ascending eigenvalues.
  Eigen::VectorXd lambda = eig.eigenvalues().cwiseMax(0.0);
  const double total = lambda.sum();
  GeneralFactor g;
  for (Eigen::Index k = p - 1; k >= 0; --k) g.explained_all.push_back(lambda(k) / total);
  g.explained_fraction = g.explained_all.front();
  Eigen::VectorXd v = eig.eigenvectors().col(p - 1);
  if (v.mean() < 0.0) v = -v;
  const double l1 = v.cwiseAbs().sum();
  for (Eigen::Index k = 0; k < p; ++k) {
    g.loadings.push_back(v(k));
    g.l1_loadings.push_back(v(k) / l1);
  }
  return g;
}

std::vector<OrderEffect> order_effect_test(const ResponseTable& table) {
  std::map<std::string, std::string> variant_of;
  for (const auto& r : table.records) {
    auto [it, inserted] = variant_of.emplace(r.rater_id, r.variant);
    if (!inserted && it->second != r.variant) {
      throw ArgumentError("order_effect_test: rater " + r.rater_id + " answered more than one variant");
    }
  }
  std::set<std::string> variants;
  for (const auto& [_, v] : variant_of) variants.insert(v);
  if (variants.size() < 2) throw ArgumentError("order_effect_test: both questionnaire variants are required");
  const std::string va = *variants.begin(), vb = *std::next(variants.begin());

  std::vector<OrderEffect> out;
  for (const auto& method : methods_of(table)) {
    for (const auto& criterion : kCriteria) {
      std::map<std::string, std::pair<double, int>> acc;
      for (const auto& r : table.records) {
        if (r.method != method || r.criterion != criterion) continue;
        auto& [s, n] = acc[r.rater_id];
        s += r.score;
        ++n;
      }
      std::vector<double> a, b;
      for (const auto& [rater, sn] : acc) {
        const std::string& v = variant_of.at(rater);
        if (v == va) a.push_back(sn.first / sn.second);
        else if (v == vb) b.push_back(sn.first / sn.second);
      }
      if (a.empty() || b.empty()) continue;
      OrderEffect e{method, criterion, static_cast<int>(a.size()), static_cast<int>(b.size()), {}, false};
      try {
        e.test = stats::two_sample_t_test(a, b);
      } catch (const Error&) {
        e.degenerate = true;
        e.test.t = e.test.p = kNaN;
        e.test.df = static_cast<double>(a.size() + b.size()) - 2.0;
      }
      out.push_back(e);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Report

namespace {

nlohmann::json num(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); }

nlohmann::json test_json(const stats::TTest& t, bool degenerate) {
  return {{"t", num(t.t)}, {"p", num(t.p)}, {"df", t.df}, {"mean_difference", num(t.mean_difference)},
          {"degenerate", degenerate}};
}

}  // namespace

nlohmann::json study_report(const ResponseTable& table) {
  validate(table, true);
  nlohmann::json report;
  nlohmann::json warnings = nlohmann::json::array();
  const ZAdjusted z = z_adjust(table);
  for (const auto& w : z.warnings) warnings.push_back(w);

  report["summary"] = {{"n_records", table.records.size()},
                       {"n_raters", raters_of(table).size()},
                       {"n_items", items_of(table).size()},
                       {"methods", methods_of(table)},
                       {"criteria", kCriteria}};

  const MethodComparison mc = method_comparison(table);
  nlohmann::json raw_means, z_means, ranks, tests;
  for (const auto& cc : mc.criteria) {
    for (const auto& s : cc.methods) {
      raw_means[cc.criterion][s.method] = {{"mean", s.raw_mean}, {"ci_low", s.raw_ci.low}, {"ci_high", s.raw_ci.high}};
      z_means[cc.criterion][s.method] = {{"mean", s.z_mean}, {"ci_low", s.z_ci.low}, {"ci_high", s.z_ci.high}};
      ranks[cc.criterion][s.method] = s.mean_rank;
    }
    nlohmann::json tj = {{"best_method", cc.best_method}, {"comparisons", nlohmann::json::object()}};
    for (const auto& t : cc.tests) tj["comparisons"][t.method] = test_json(t.test, t.degenerate);
    tests[cc.criterion] = tj;
  }
  report["raw_means"] = raw_means;
  report["z_means"] = z_means;
  report["mean_ranks"] = ranks;
  report["method_tests"] = tests;
  report["excluded_records"] = mc.excluded_records;

  nlohmann::json rho;
  for (const auto& c : kCriteria) {
    const RhoResult r = interobserver_rho(table, c);
    rho[c] = {{"rho", r.rho}, {"pairs_used", r.pairs_used}};
    for (const auto& w : r.warnings) warnings.push_back(c + ": " + w);
  }
  report["interobserver_rho"] = rho;

  const Eigen::MatrixXd m = criterion_matrix(z.table);
  try {
    report["kmo"] = kmo(m);
  } catch (const Error& e) {
    report["kmo"] = nullptr;
    warnings.push_back(std::string("kmo: ") + e.what());
  }
  try {
    const GeneralFactor g = general_factor(m);
    report["general_factor"] = {{"explained_fraction", g.explained_fraction},
                                {"explained_all", g.explained_all},
                                {"loadings", g.loadings},
                                {"l1_loadings", g.l1_loadings},
                                {"variables", kCriteria}};
  } catch (const Error& e) {
    report["general_factor"] = nullptr;
    warnings.push_back(std::string("general_factor: ") + e.what());
  }

  nlohmann::json order = nlohmann::json::array();
  try {
    for (const auto& e : order_effect_test(table)) {
      nlohmann::json j = test_json(e.test, e.degenerate);
      j["method"] = e.method;
      j["criterion"] = e.criterion;
      j["n_a"] = e.n_a;
      j["n_b"] = e.n_b;
      order.push_back(j);
    }
  } catch (const ArgumentError& e) {
    warnings.push_back(std::string("order effects: ") + e.what());
  }
  report["order_effects"] = order;
  report["warnings"] = warnings;
  return report;
}

std::string study_summary_text(const nlohmann::json& report) {
  std::ostringstream out;
  out << std::fixed << std::setprecision(3);
  const auto& s = report.at("summary");
  out << "responses: " << s.at("n_records").get<long>() << " from " << s.at("n_raters").get<long>()
      << " raters on " << s.at("n_items").get<long>() << " items\n";
  for (const auto& c : kCriteria) {
    if (!report.at("raw_means").contains(c)) continue;
    out << "\n[" << c << "]  rho = " << report.at("interobserver_rho").at(c).at("rho").get<double>() << "\n";
    out << "  method                 raw     z      rank\n";
    for (const auto& [method, v] : report.at("raw_means").at(c).items()) {
      out << "  " << std::left << std::setw(20) << method << std::right << std::setw(7)
          << v.at("mean").get<double>() << std::setw(7)
          << report.at("z_means").at(c).at(method).at("mean").get<double>() << std::setw(7)
          << report.at("mean_ranks").at(c).at(method).get<double>() << "\n";
    }
    const auto& t = report.at("method_tests").at(c);
    out << "  best: " << t.at("best_method").get<std::string>() << "\n";
    for (const auto& [method, tj] : t.at("comparisons").items()) {
      if (tj.at("degenerate").get<bool>()) {
        out << "    vs " << method << ": degenerate\n";
      } else {
        out << "    vs " << method << ": t(" << std::setprecision(0) << tj.at("df").get<double>()
            << std::setprecision(3) << ") = " << tj.at("t").get<double>() << ", p = " << tj.at("p").get<double>()
            << "\n";
      }
    }
  }
  out << "\nKMO: ";
  if (report.at("kmo").is_null()) out << "n/a";
  else out << report.at("kmo").get<double>();
  out << "\ngeneral factor: ";
  if (report.at("general_factor").is_null()) {
    out << "n/a\n";
  } else {
    const auto& g = report.at("general_factor");
    out << g.at("explained_fraction").get<double>() << " of variance; L1 loadings";
    for (double l : g.at("l1_loadings").get<std::vector<double>>()) out << ' ' << l;
    out << "\n";
  }
  const auto& order = report.at("order_effects");
  if (!order.empty()) {
    double pmin = 1.0, pmax = 0.0;
    int n = 0;
    for (const auto& e : order) {
      if (e.at("p").is_null()) continue;
      const double p = e.at("p").get<double>();
      pmin = std::min(pmin, p);
      pmax = std::max(pmax, p);
      ++n;
    }
    out << "order effects: " << n << " tests, p in [" << pmin << ", " << pmax << "]\n";
  }
  for (const auto& w : report.at("warnings")) out << "warning: " << w.get<std::string>() << "\n";
  return out.str();
}

ResponseTable generate_synthetic_responses(int n_raters, int n_items, const std::vector<std::string>& methods,
                                           std::uint64_t seed) {
  if (n_raters < 1 || n_items < 1 || methods.empty()) {
    throw ArgumentError("generate_synthetic_responses: need raters, items and methods");
  }
  std::mt19937_64 rng(seed);
  auto normal = [&] { return nn::standard_normal(rng); };
  std::vector<double> method_effect;
  for (std::size_t m = 0; m < methods.size(); ++m) {
    method_effect.push_back(1.8 - 1.2 * static_cast<double>(m) + 0.2 * normal());
  }
  std::vector<double> item_offset(n_items), rater_bias(n_raters);
  for (auto& v : item_offset) v = 0.8 * normal();
  for (auto& v : rater_bias) v = 0.4 * normal();
  ResponseTable t;
  for (int r = 0; r < n_raters; ++r) {
    char rid[16];
    std::snprintf(rid, sizeof rid, "r%02d", r + 1);
    const std::string variant = r % 2 == 0 ? "A" : "B";
    for (int i = 0; i < n_items; ++i) {
      char iid[16];
      std::snprintf(iid, sizeof iid, "item%02d", i + 1);
      for (std::size_t m = 0; m < methods.size(); ++m) {
        // Shared per-answer impression drives all three criteria.
        const double common = method_effect[m] + item_offset[i] + rater_bias[r] + 0.8 * normal();
        for (std::size_t c = 0; c < kCriteria.size(); ++c) {
          const double s = common + (c == 2 ? -0.3 : 0.0) + 0.6 * normal();
          const double score = std::clamp(std::round(s), double{kMinScore}, double{kMaxScore});
          t.records.push_back({rid, iid, methods[m], kCriteria[c], score, variant});
        }
      }
    }
  }
  return t;
}

}  // namespace cfexplain
