// Acceptance run: one PASS/FAIL line per criterion. Exit status is non-zero
// if any criterion fails. Criterion 10 needs a user-supplied panel
// (HECA_REAL_DATA=path, optional HECA_REAL_SPAN=FIRST:LAST) and is skipped
// otherwise.

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <functional>
#include <iomanip>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "heca/heca.hpp"
#include "oracles.hpp"

using namespace heca;

namespace {

// Pinned tolerances.
constexpr double kObjectiveTol = 1e-8;        // 1: B&B vs exhaustive objective
constexpr double kGridTol = 1e-5;             // 2: QP vs grid oracle
constexpr double kKktTol = 1e-8;              // 2: KKT residual
constexpr double kEqualWeightTol = 1e-4;      // 3: weights vs 1/c
constexpr double kBoundSlack = 1e-12;         // 4: rounding allowance on R_T <= bound
constexpr double kDecayRatio = 0.25;          // 5: R_10000 <= ratio * R_100
constexpr double kRecoveryWeightTol = 1e-6;   // 7: committee weights vs 1/3
constexpr double kRecoveryLossTol = 1e-10;    // 7: per-round loss after burn-in

struct Outcome {
  bool pass = true;
  std::string detail;
};

int failures = 0;
std::size_t jensen_violations = 0;  // accumulated over every run below
std::size_t jensen_rounds = 0;

void report(int id, const std::string& name, const std::function<Outcome()>& body) {
  const auto start = std::chrono::steady_clock::now();
  Outcome o;
  try {
    o = body();
  } catch (const std::exception& e) {
    o.pass = false;
    o.detail = std::string("exception: ") + e.what();
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  if (!o.pass) ++failures;
  std::cout << (o.pass ? "PASS" : "FAIL") << "  criterion " << std::setw(2) << id << "  " << name << ": " << o.detail
            << " [" << std::fixed << std::setprecision(1) << secs << " s]" << std::defaultfloat << std::endl;
}

void skip(int id, const std::string& name, const std::string& why) {
  std::cout << "SKIP  criterion " << std::setw(2) << id << "  " << name << ": " << why << std::endl;
}

std::string sci(double v) {
  std::ostringstream os;
  os << std::scientific << std::setprecision(3) << v;
  return os.str();
}

RidgeWindow random_window(std::mt19937_64& rng, Eigen::Index r, Eigen::Index M) {
  Eigen::MatrixXd f = oracle::random_matrix(rng, r, M, 0.0, 3.0);
  Eigen::VectorXd y = oracle::random_matrix(rng, r, 1, 0.0, 3.0).col(0);
  return RidgeWindow(y, f);
}

// 1. Branch and bound against complete enumeration.
Outcome solver_equivalence() {
  std::mt19937_64 rng(20240101);
  const std::vector<double> grid = default_lambda_grid();
  std::size_t subset_mismatch = 0;
  double worst = 0.0;
  const int instances = 240;
  for (int i = 0; i < instances; ++i) {
    const auto M = static_cast<Eigen::Index>(oracle::uniform_int(rng, 4, 12));
    const auto r = static_cast<Eigen::Index>(oracle::uniform_int(rng, 4, 20));
    auto w = random_window(rng, r, M);
    const double lambda = grid[oracle::uniform_int(rng, 0, grid.size() - 1)];
    const std::size_t c = oracle::uniform_int(rng, 1, static_cast<std::size_t>(M));
    const auto ex = solve_exhaustive(w, c, lambda, kMachineEpsilonWeight);
    const auto bb = solve_branch_bound(w, c, lambda, kMachineEpsilonWeight);
    worst = std::max(worst, std::abs(ex.objective - bb.objective));
    if (ex.subset != bb.subset) ++subset_mismatch;
  }
  return {worst <= kObjectiveTol && subset_mismatch == 0,
          std::to_string(instances) + " instances, max |objective gap| " + sci(worst) + " (tol " + sci(kObjectiveTol) +
              "), subset mismatches " + std::to_string(subset_mismatch)};
}

// 2. Subset QP against the simplex grid search.
Outcome qp_exactness() {
  std::mt19937_64 rng(777);
  double worst_gap = 0.0;
  double worst_kkt = 0.0;
  const int instances = 120;
  for (int i = 0; i < instances; ++i) {
    const auto M = static_cast<Eigen::Index>(oracle::uniform_int(rng, 4, 8));
    const auto r = static_cast<Eigen::Index>(oracle::uniform_int(rng, 4, 20));
    auto w = random_window(rng, r, M);
    const std::size_t n = 2 + static_cast<std::size_t>(i % 3);
    std::vector<std::size_t> all(static_cast<std::size_t>(M));
    for (std::size_t j = 0; j < all.size(); ++j) all[j] = j;
    std::shuffle(all.begin(), all.end(), rng);
    Subset s(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(n));
    std::sort(s.begin(), s.end());
    const double lambda = i % 5 == 0 ? 0.0 : oracle::uniform(rng, 0.0, 2.0);
    const auto sol = solve_subset_ridge(w, s, lambda, kMachineEpsilonWeight);
    const auto grid = oracle::grid_search_simplex(w.y(), w.f(), s, lambda);
    worst_gap = std::max(worst_gap, std::abs(sol.objective - grid.objective));
    worst_kkt = std::max(worst_kkt, sol.kkt_residual);
  }
  return {worst_gap <= kGridTol && worst_kkt <= kKktTol,
          std::to_string(instances) + " subsets of 2-4 experts, max |objective - grid| " + sci(worst_gap) +
              " (tol " + sci(kGridTol) + "), max KKT residual " + sci(worst_kkt) + " (tol " + sci(kKktTol) + ")"};
}

// 3. Shrinkage-target limit.
Outcome equal_weight_limit() {
  std::mt19937_64 rng(31337);
  double worst = 0.0;
  int solves = 0;
  for (int i = 0; i < 20; ++i) {
    const auto M = static_cast<Eigen::Index>(oracle::uniform_int(rng, 3, 8));
    auto w = random_window(rng, 12, M);
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(w.gram());
    const double lambda = 1e8 * svd.singularValues()[0];
    for (std::size_t c = 1; c <= static_cast<std::size_t>(M); ++c) {
      const auto sol = solve_branch_bound(w, c, lambda, kMachineEpsilonWeight);
      for (std::size_t j : sol.subset)
        worst = std::max(worst, std::abs(sol.weights[static_cast<Eigen::Index>(j)] - 1.0 / static_cast<double>(c)));
      ++solves;
    }
  }
  return {worst <= kEqualWeightTol, std::to_string(solves) + " committee fits at lambda = 1e8 ||F'F||_2, max |b_j - 1/c| " +
                                        sci(worst) + " (tol " + sci(kEqualWeightTol) + ")"};
}

// Drives the aggregator on a synthetic loss sequence. next_loss(t, pi)
// returns the committee losses of round t given the round's distribution;
// forecasts are sqrt(loss) against a zero target, so committee losses are
// exactly the generated values.
struct LossRun {
  std::vector<double> decision;
  std::vector<Eigen::VectorXd> committee;
};

LossRun drive(std::size_t M, std::size_t T, const AggregatorOptions& opt,
              const std::function<Eigen::VectorXd(std::size_t, const Eigen::VectorXd&)>& next_loss) {
  AggregatorState s = make_state(M, opt);
  LossRun run;
  for (std::size_t t = 1; t <= T; ++t) {
    std::optional<Eigen::VectorXd> loss;
    if (t > opt.delay) loss = run.committee[t - opt.delay - 1];
    begin_round(s, loss);
    const Eigen::VectorXd l = next_loss(t, s.pi);
    const Eigen::VectorXd yhat = l.array().sqrt();
    const double f = announce(s, yhat);
    run.decision.push_back(f * f);
    run.committee.push_back(l);
    ++jensen_rounds;
    if (!jensen_holds(0.0, s.pi, yhat)) ++jensen_violations;
  }
  return run;
}

// Largest R_T - bound over all prefixes.
double worst_prefix_excess(const LossRun& run, double b1, BoundVariant variant) {
  const auto M = static_cast<std::size_t>(run.committee[0].size());
  Eigen::VectorXd cum = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(M));
  double dec = 0.0;
  double bbar = 0.0;
  double worst = -INFINITY;
  for (std::size_t t = 0; t < run.decision.size(); ++t) {
    dec += run.decision[t];
    cum += run.committee[t];
    bbar = std::max(bbar, run.committee[t].maxCoeff());
    if (!(bbar > 0.0)) continue;
    const double T = static_cast<double>(t + 1);
    const double regret = dec / T - cum.minCoeff() / T;
    worst = std::max(worst, regret - theorem_bound(M, t + 1, b1, bbar, variant).value);
  }
  return worst;
}

// 4. Regret stays under the bound on every prefix.
Outcome regret_bound_compliance() {
  const double B = 1.0;
  const std::size_t T = 10000;
  double worst = -INFINITY;
  int runs = 0;
  std::mt19937_64 rng(4242);
  for (std::size_t M : {2u, 5u, 10u}) {
    const std::vector<std::pair<std::string, std::function<Eigen::VectorXd(std::size_t, const Eigen::VectorXd&)>>>
        sequences = {
            {"adversary",
             [&](std::size_t, const Eigen::VectorXd& pi) {
               Eigen::Index heavy = 0;
               for (Eigen::Index c = 1; c < pi.size(); ++c)
                 if (pi[c] > pi[heavy]) heavy = c;
               Eigen::VectorXd l = Eigen::VectorXd::Zero(pi.size());
               l[heavy] = B;
               return l;
             }},
            {"uniform",
             [&](std::size_t, const Eigen::VectorXd& pi) {
               Eigen::VectorXd l(pi.size());
               for (Eigen::Index c = 0; c < l.size(); ++c) l[c] = B * oracle::uniform01(rng);
               return l;
             }},
            {"switching",
             [&](std::size_t t, const Eigen::VectorXd& pi) {
               Eigen::VectorXd l = Eigen::VectorXd::Constant(pi.size(), B);
               l[static_cast<Eigen::Index>((t / 250) % static_cast<std::size_t>(pi.size()))] = 0.0;
               return l;
             }},
        };
    for (const auto& [name, gen] : sequences)
      for (std::size_t delay : {2u, 1u})
        for (double b1 : {B, B / 2.0, 2.0 * B}) {
          AggregatorOptions opt;
          opt.delay = delay;
          opt.schedule = Schedule::proof;
          opt.b1 = b1;
          const LossRun run = drive(M, T, opt, gen);
          worst = std::max(worst, worst_prefix_excess(run, b1, delay == 1 ? BoundVariant::delayed : BoundVariant::heca));
          ++runs;
        }
  }
  // The delayed bound is the two-round bound over sqrt(2), bit for bit.
  bool ratio_exact = true;
  for (std::size_t M : {2u, 7u, 40u})
    for (std::size_t t : {1u, 10u, 9999u})
      for (auto [b1, bb] : {std::pair{1.0, 1.0}, {1.0, 2.0}, {2.0, 1.0}})
        ratio_exact &= theorem_bound(M, t, b1, bb, BoundVariant::delayed).value ==
                       theorem_bound(M, t, b1, bb, BoundVariant::heca).value / std::sqrt(2.0);
  return {worst <= kBoundSlack && ratio_exact,
          std::to_string(runs) + " runs x " + std::to_string(T) +
              " prefixes (M in {2,5,10}; adversary, uniform, switching; delay 2 and 1; B1 exact, under, over), "
              "max(R_T - bound) " + sci(worst) + ", delayed bound = bound/sqrt(2) exactly: " +
              (ratio_exact ? "yes" : "no")};
}

// 5. Average regret decays.
Outcome no_regret_trend() {
  std::mt19937_64 rng(55);
  const std::vector<double> mu{0.2, 0.5, 0.8, 1.0};
  AggregatorOptions opt;
  opt.b1 = 1.1;
  const LossRun run = drive(4, 10000, opt, [&](std::size_t, const Eigen::VectorXd& pi) {
    Eigen::VectorXd l(pi.size());
    for (Eigen::Index c = 0; c < l.size(); ++c) l[c] = mu[static_cast<std::size_t>(c)] + oracle::uniform(rng, -0.1, 0.1);
    return l;
  });
  auto regret_at = [&](std::size_t T) {
    double dec = 0.0;
    Eigen::VectorXd cum = Eigen::VectorXd::Zero(4);
    for (std::size_t t = 0; t < T; ++t) {
      dec += run.decision[t];
      cum += run.committee[t];
    }
    return (dec - cum.minCoeff()) / static_cast<double>(T);
  };
  const double r100 = regret_at(100);
  const double r10000 = regret_at(10000);
  return {r100 > 0.0 && r10000 <= kDecayRatio * r100,
          "R_100 = " + sci(r100) + ", R_10000 = " + sci(r10000) + ", ratio " + sci(r10000 / r100) + " (limit " +
              sci(kDecayRatio) + ")"};
}

// The zero-noise panel used by criteria 7 and 9: 8 experts, 40 quarters,
// target = mean of experts 1, 2, 3.
ForecastPanel benchmark_panel() {
  SyntheticSpec spec;
  spec.experts = 8;
  spec.periods = 40;
  spec.noise = 0.0;
  spec.seed = 42;
  spec.members = {0, 1, 2};
  return emit_synthetic(spec);
}

ExperimentConfig benchmark_config() {
  ExperimentConfig cfg;
  cfg.algorithms = {Algorithm::heca,  Algorithm::heca_delayed,  Algorithm::efp,         Algorithm::efp_delayed,
                    Algorithm::hedge, Algorithm::hedge_delayed, Algorithm::equal_weight};
  return cfg;
}

void count_jensen(const ExperimentResult& res) {
  for (const auto& r : res.results) {
    if (r.algorithm == Algorithm::equal_weight) continue;
    jensen_violations += r.run.jensen_violations;
    jensen_rounds += r.run.realized_rounds();
  }
}

// 7. Recovery of the generating committee.
Outcome pipeline_recovery() {
  const ForecastPanel p = benchmark_panel();
  CommitteeConfig cc;
  cc.lambda_grid = {0.01};
  CommitteeEngine engine(p, cc);
  std::size_t wrong_members = 0;
  double worst_weight = 0.0;
  std::size_t rounds = 0;
  for (std::size_t t = engine.first_round(); t < p.num_periods(); ++t, ++rounds) {
    const auto r = engine.round(t);
    if (r.members[2] != Subset{0, 1, 2}) ++wrong_members;
    for (Eigen::Index j = 0; j < 3; ++j) worst_weight = std::max(worst_weight, std::abs(r.weights(2, j) - 1.0 / 3.0));
  }

  ExperimentConfig cfg;
  cfg.algorithms = {Algorithm::heca};
  const ExperimentResult res = run_experiment(cfg, p);
  count_jensen(res);
  double worst_loss = 0.0;
  for (double v : res.results[0].report.per_round_loss) worst_loss = std::max(worst_loss, v);
  const bool selection_ok = wrong_members == 0 && worst_weight <= kRecoveryWeightTol;
  const bool loss_ok = worst_loss <= kRecoveryLossTol;
  return {selection_ok && loss_ok,
          "c=3 committee = {1,2,3} in " + std::to_string(rounds - wrong_members) + "/" + std::to_string(rounds) +
              " rounds, max |b - 1/3| " + sci(worst_weight) + " (tol " + sci(kRecoveryWeightTol) +
              "); end-to-end HECA max per-round loss " + sci(worst_loss) + " over " +
              std::to_string(res.results[0].report.per_round_loss.size()) + " rounds (tol " + sci(kRecoveryLossTol) +
              ")"};
}

ForecastPanel make_panel(const std::vector<std::vector<double>>& rows) {
  ForecastPanel p;
  const auto T = static_cast<Eigen::Index>(rows.size());
  const auto M = static_cast<Eigen::Index>(rows[0].size());
  for (Eigen::Index t = 0; t < T; ++t) p.periods.push_back(quarter_label(2000 * 4 + t));
  for (Eigen::Index m = 0; m < M; ++m) p.experts.push_back("e" + std::to_string(m + 1));
  p.values.resize(T, M);
  p.mask.resize(T, M);
  p.target = Eigen::VectorXd::Ones(T);
  for (Eigen::Index t = 0; t < T; ++t)
    for (Eigen::Index m = 0; m < M; ++m) {
      p.values(t, m) = rows[static_cast<std::size_t>(t)][static_cast<std::size_t>(m)];
      p.mask(t, m) = std::isfinite(p.values(t, m));
    }
  return p;
}

// 8. Filtering and imputation rules.
Outcome panel_rules() {
  const double NA = std::numeric_limits<double>::quiet_NaN();
  int failed = 0;
  int checks = 0;
  auto check = [&](bool ok) {
    ++checks;
    if (!ok) ++failed;
  };
  // Two consecutive gaps exclude; two separated gaps do not.
  auto p = make_panel({{1, 1, 1}, {1, 1, 1}, {NA, NA, 1}, {NA, 1, 1}, {1, NA, 1}, {1, 1, 1}});
  auto f = filter_experts(p);
  check(f.experts == std::vector<std::string>{"e2", "e3"});
  // Rows are averaged over the experts who reported.
  auto q = impute_missing(make_panel({{1.0, NA, 3.0}, {4.0, NA, NA}, {1.0, 2.0, 3.0}}));
  check(q.values(0, 1) == 2.0 && q.values(1, 1) == 4.0 && q.values(1, 2) == 4.0 && q.complete());
  // One missing forecast, filled by the mean of the remaining reporters.
  auto e = impute_missing(filter_experts(make_panel({{1.2, 1.4, 1.0, 1.6}, {0.8, NA, 1.1, 0.9}, {1.0, 1.3, 1.2, 1.1}})));
  check(e.num_experts() == 4 && e.values(1, 1) == (0.8 + 1.1 + 0.9) / 3.0);
  // Reported values are never altered.
  check(e.values(1, 0) == 0.8 && e.values(0, 3) == 1.6);
  return {failed == 0, std::to_string(checks - failed) + "/" + std::to_string(checks) + " rule vectors reproduced"};
}

// 9. Thread-count determinism of the full benchmark.
Outcome determinism() {
  const ForecastPanel p = benchmark_panel();
  const ExperimentConfig cfg = benchmark_config();
  auto summaries = [&](const char* threads) {
    ::setenv("HECA_THREADS", threads, 1);
    const ExperimentResult res = run_experiment(cfg, p);
    count_jensen(res);
    std::string all;
    for (const auto& r : res.results) all += summary_json(cfg, res, r).dump() + "\n";
    return all;
  };
  const std::string one = summaries("1");
  const std::string eight = summaries("8");
  ::unsetenv("HECA_THREADS");
  return {one == eight, std::to_string(cfg.algorithms.size()) + " summary JSON documents " +
                            (one == eight ? "identical" : "differ") + " between HECA_THREADS=1 and 8"};
}

// 10. Real panel, if supplied.
Outcome real_data(const std::string& path) {
  ExperimentConfig cfg;
  cfg.data_path = path;
  if (const char* span = std::getenv("HECA_REAL_SPAN")) cfg.span = span;
  cfg.algorithms = {Algorithm::equal_weight};
  const ExperimentResult res = run_experiment(cfg);
  const auto& r = res.results[0];
  double total = 0.0;
  for (double v : r.report.per_round_loss) total += v;
  std::ostringstream os;
  os << r.report.per_round_loss.size() << " equal-weight rounds, cumulative loss " << total << ", condition number ";
  if (res.diagnostics) os << res.diagnostics->condition_number;
  else os << "n/a";
  return {res.diagnostics.has_value(), os.str()};
}

}  // namespace

int main() {
  report(1, "solver equivalence", solver_equivalence);
  report(2, "QP exactness", qp_exactness);
  report(3, "equal-weight limit", equal_weight_limit);
  report(4, "regret bound compliance", regret_bound_compliance);
  report(5, "no-regret trend", no_regret_trend);
  report(7, "pipeline recovery", pipeline_recovery);
  report(8, "panel rules", panel_rules);
  report(9, "determinism", determinism);
  report(6, "Jensen dominance", [] {
    return Outcome{jensen_violations == 0, std::to_string(jensen_violations) + " violations in " +
                                               std::to_string(jensen_rounds) + " aggregation rounds"};
  });
  if (const char* path = std::getenv("HECA_REAL_DATA"))
    report(10, "real-data check", [&] { return real_data(path); });
  else
    skip(10, "real-data check", "set HECA_REAL_DATA to a panel CSV to run");
  std::cout << (failures == 0 ? "ALL CRITERIA PASSED" : std::to_string(failures) + " CRITERIA FAILED") << std::endl;
  return failures == 0 ? 0 : 1;
}
