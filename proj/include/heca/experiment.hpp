#pragma once

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "heca/committees.hpp"
#include "heca/error.hpp"
#include "heca/numeric.hpp"
#include "heca/online.hpp"
#include "heca/panel.hpp"
#include "heca/subset_select.hpp"

namespace heca {

enum class Algorithm { heca, heca_delayed, efp, efp_delayed, hedge, hedge_delayed, equal_weight };

inline std::string to_string(Algorithm a) {
  switch (a) {
    case Algorithm::heca: return "heca";
    case Algorithm::heca_delayed: return "heca-delayed";
    case Algorithm::efp: return "efp";
    case Algorithm::efp_delayed: return "efp-delayed";
    case Algorithm::hedge: return "hedge";
    case Algorithm::hedge_delayed: return "hedge-delayed";
    default: return "equal-weight";
  }
}

inline Algorithm parse_algorithm(const std::string& s) {
  for (auto a : {Algorithm::heca, Algorithm::heca_delayed, Algorithm::efp, Algorithm::efp_delayed, Algorithm::hedge,
                 Algorithm::hedge_delayed, Algorithm::equal_weight})
    if (s == to_string(a)) return a;
  throw ValidationError("unknown algorithm '" + s +
                        "' (expected heca, heca-delayed, efp, efp-delayed, hedge, hedge-delayed, equal-weight)");
}

inline bool uses_committees(Algorithm a) {
  return a == Algorithm::heca || a == Algorithm::heca_delayed || a == Algorithm::efp || a == Algorithm::efp_delayed;
}

// Rounds of delay before a loss reaches the aggregator.
inline std::size_t algorithm_delay(Algorithm a) {
  return a == Algorithm::heca_delayed || a == Algorithm::efp_delayed || a == Algorithm::hedge_delayed ? 1 : 2;
}

// Two-round-delay variants pair with l = 2, delayed announcements with l = 1.
inline std::size_t default_lag(Algorithm a) { return a == Algorithm::equal_weight ? 1 : algorithm_delay(a); }

struct ExperimentConfig {
  std::string data_path;
  std::string span;        // data range "FIRST:LAST"; empty = whole file
  std::string eval_start;  // period of round 1; empty = earliest feasible
  std::vector<Algorithm> algorithms{Algorithm::heca};
  std::size_t window = 16;
  std::size_t val_window = 1;
  std::string lambda_grid = "0.01:0.01:2";
  std::optional<std::size_t> lag;  // empty = per-algorithm default
  double epsilon = kMachineEpsilonWeight;
  std::optional<double> b1;        // empty = auto
  Backend backend = Backend::branch_bound;
  Schedule schedule = Schedule::pseudocode;
  std::string out_dir = "out";
  bool force_lag = false;
  bool pretty = false;
  bool audit = false;
};

namespace detail {

inline std::string trim(const std::string& s) {
  const std::size_t b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ValidationError(key + " expects true or false, got '" + v + "'");
}

inline std::size_t parse_positive(const std::string& key, const std::string& v) {
  const double d = parse_double(v);
  if (!(d >= 1.0) || d != std::floor(d) || d > 1e9) throw ValidationError(key + " must be a positive integer");
  return static_cast<std::size_t>(d);
}

}  // namespace detail

// One setting by its flag name (without the leading dashes).
inline void apply_setting(ExperimentConfig& cfg, const std::string& key, const std::string& value) {
  if (key == "data") cfg.data_path = value;
  else if (key == "span") cfg.span = value;
  else if (key == "eval-start") cfg.eval_start = value;
  else if (key == "algo") {
    cfg.algorithms.clear();
    std::stringstream ss(value);
    std::string item;
    while (std::getline(ss, item, ',')) {
      const Algorithm a = parse_algorithm(detail::trim(item));
      if (std::find(cfg.algorithms.begin(), cfg.algorithms.end(), a) == cfg.algorithms.end())
        cfg.algorithms.push_back(a);
    }
    if (cfg.algorithms.empty()) throw ValidationError("no algorithm selected");
  } else if (key == "window") cfg.window = detail::parse_positive(key, value);
  else if (key == "val-window") cfg.val_window = detail::parse_positive(key, value);
  else if (key == "lambda-grid") {
    parse_grid(value);
    cfg.lambda_grid = value;
  } else if (key == "lag") cfg.lag = detail::parse_positive(key, value);
  else if (key == "epsilon") cfg.epsilon = parse_double(value);
  else if (key == "b1") {
    if (value == "auto") cfg.b1.reset();
    else cfg.b1 = parse_double(value);
  } else if (key == "backend") cfg.backend = parse_backend(value);
  else if (key == "schedule") {
    if (value == "pseudocode") cfg.schedule = Schedule::pseudocode;
    else if (value == "proof") cfg.schedule = Schedule::proof;
    else throw ValidationError("schedule must be pseudocode or proof");
  } else if (key == "out") cfg.out_dir = value;
  else if (key == "force-lag") cfg.force_lag = detail::parse_bool(key, value);
  else if (key == "pretty") cfg.pretty = detail::parse_bool(key, value);
  else if (key == "audit") cfg.audit = detail::parse_bool(key, value);
  else throw ValidationError("unknown setting '" + key + "'");
}

// Flat key=value lines; '#' starts a comment.
inline void parse_config(std::istream& in, ExperimentConfig& cfg) {
  std::string line;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    ++row;
    const std::size_t hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos) throw ParseError("expected key=value", row, 1);
    apply_setting(cfg, detail::trim(line.substr(0, eq)), detail::trim(line.substr(eq + 1)));
  }
}

inline void load_config(const std::string& path, ExperimentConfig& cfg) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open config file '" + path + "'");
  parse_config(in, cfg);
}

inline std::size_t lag_for(const ExperimentConfig& cfg, Algorithm a) { return cfg.lag.value_or(default_lag(a)); }

inline void validate(const ExperimentConfig& cfg) {
  if (cfg.algorithms.empty()) throw ValidationError("no algorithm selected");
  if (cfg.lag && *cfg.lag != 1 && *cfg.lag != 2) throw ValidationError("lag must be 1 or 2");
  if (cfg.b1 && (!std::isfinite(*cfg.b1) || !(*cfg.b1 > 0.0))) throw ValidationError("b1 must be positive");
  if (!std::isfinite(cfg.epsilon) || !(cfg.epsilon > 0.0)) throw ValidationError("epsilon must be positive");
  for (double v : parse_grid(cfg.lambda_grid))
    if (!(v > 0.0)) throw ValidationError("lambda grid values must be positive");
  if (!cfg.force_lag && cfg.lag)
    for (Algorithm a : cfg.algorithms)
      if (a != Algorithm::equal_weight && *cfg.lag != algorithm_delay(a))
        throw ValidationError("lag " + std::to_string(*cfg.lag) + " does not match " + to_string(a) + " (expects lag " +
                              std::to_string(algorithm_delay(a)) + "); pass --force-lag to override");
}

inline CommitteeConfig committee_config(const ExperimentConfig& cfg, std::size_t lag) {
  CommitteeConfig cc;
  cc.window = cfg.window;
  cc.val_window = cfg.val_window;
  cc.lambda_grid = parse_grid(cfg.lambda_grid);
  cc.lag = lag;
  cc.epsilon = cfg.epsilon;
  cc.backend = cfg.backend;
  return cc;
}

// Prepared panel: sliced to the span, filtered and imputed over it.
inline ForecastPanel prepare_panel(const ForecastPanel& raw, const std::string& span) {
  ForecastPanel p = slice_periods(raw, resolve_span(raw, span));
  p = filter_experts(p);
  return impute_missing(p);
}

// Earliest row at which `a` can produce its round-1 forecast.
inline std::size_t first_feasible_row(const ExperimentConfig& cfg, Algorithm a) {
  if (a == Algorithm::equal_weight) return 0;
  const std::size_t lag = lag_for(cfg, a);
  std::size_t row = cfg.b1 ? 0 : lag;  // automatic B1 needs one observed loss
  if (uses_committees(a)) row = std::max(row, first_committee_round(committee_config(cfg, lag)));
  return row;
}

// Largest squared error of any individual expert over rows 0..t1-lag, the
// losses the decision maker has seen before round 1.
inline double auto_b1(const ForecastPanel& p, std::size_t t1, std::size_t lag) {
  if (t1 < lag) throw BurnInError("automatic B1 needs an observed loss before round 1", lag);
  double b = 0.0;
  for (std::size_t t = 0; t + lag <= t1; ++t) {
    const auto ti = static_cast<Eigen::Index>(t);
    b = std::max(b, (p.values.row(ti).array() - p.target[ti]).square().maxCoeff());
  }
  if (!(b > 0.0)) throw ValidationError("automatic B1 is zero (experts were exact before round 1); pass --b1");
  return b;
}

struct AlgorithmResult {
  Algorithm algorithm = Algorithm::heca;
  std::size_t lag = 0;
  double b1 = 0.0;
  bool b1_auto = true;
  OnlineRun run;
  RegretReport report;
  std::vector<std::string> periods;  // label of each played round
  std::vector<CommitteeForecasts> committees;
};

struct ExperimentResult {
  ForecastPanel panel;  // filtered and imputed
  std::optional<PanelDiagnostics> diagnostics;
  std::size_t first_row = 0;  // row of round 1
  std::vector<AlgorithmResult> results;
};

namespace detail {

inline std::vector<CommitteeForecasts> committee_rounds(const ForecastPanel& p, const CommitteeConfig& cc,
                                                        std::size_t first, std::size_t last) {
  CommitteeEngine engine(p, cc);
  std::vector<CommitteeForecasts> out;
  for (std::size_t t = first; t <= last; ++t) out.push_back(engine.round(t));
  return out;
}

}  // namespace detail

inline ExperimentResult run_experiment(const ExperimentConfig& cfg, const ForecastPanel& raw) {
  validate(cfg);
  ExperimentResult res;
  res.panel = prepare_panel(raw, cfg.span);
  const ForecastPanel& p = res.panel;
  const std::size_t T = p.num_periods();
  const std::size_t realized = p.realized_count();
  if (realized == 0) throw ValidationError("no realized targets in the span");

  std::size_t feasible = 0;
  for (Algorithm a : cfg.algorithms) feasible = std::max(feasible, first_feasible_row(cfg, a));
  const auto burn_in = [&](const std::string& why) {
    const std::string where = feasible < T ? "first feasible start is " + p.periods[feasible]
                                           : "the span needs at least " + std::to_string(feasible + 1) + " periods";
    return BurnInError(why + "; " + where, feasible);
  };
  if (feasible >= T || feasible >= realized) throw burn_in("not enough history for the burn-in");
  res.first_row = feasible;
  if (!cfg.eval_start.empty()) {
    res.first_row = period_index(p, cfg.eval_start);
    if (res.first_row < feasible) throw burn_in("evaluation start " + cfg.eval_start + " is inside the burn-in");
    if (res.first_row >= realized) throw ValidationError("evaluation start has no realized target");
  }
  const std::size_t t1 = res.first_row;
  if (realized >= 2) res.diagnostics = diagnostics(p, {0, realized - 1});

  std::map<std::size_t, std::vector<CommitteeForecasts>> by_lag;
  for (Algorithm a : cfg.algorithms) {
    AlgorithmResult r;
    r.algorithm = a;
    r.lag = lag_for(cfg, a);
    const auto M = static_cast<Eigen::Index>(p.num_experts());

    if (a == Algorithm::equal_weight) {
      const EqualWeightRun ew = equal_weight_run(p, {t1, realized - 1});
      const auto n = static_cast<Eigen::Index>(ew.loss.size());
      r.run.forecast = ew.forecast;
      r.run.loss = ew.loss;
      r.run.target.assign(p.target.data() + t1, p.target.data() + t1 + n);
      r.run.committee_loss =
          (p.values.middleRows(static_cast<Eigen::Index>(t1), n).colwise() - p.target.segment(static_cast<Eigen::Index>(t1), n))
              .array()
              .square()
              .matrix();
      r.run.pi = Eigen::MatrixXd::Constant(n, M, 1.0 / static_cast<double>(M));
      r.run.B.assign(static_cast<std::size_t>(n), std::numeric_limits<double>::quiet_NaN());
      r.run.eta = r.run.B;
      r.b1_auto = false;
      r.b1 = std::numeric_limits<double>::quiet_NaN();
      r.report = make_report(r.run, 1.0, BoundVariant::heca);
      r.report.bound.reset();
    } else {
      r.b1_auto = !cfg.b1;
      r.b1 = cfg.b1 ? *cfg.b1 : auto_b1(p, t1, r.lag);
      // Rounds whose estimation window is observed: t - lag < realized.
      const std::size_t last = std::min(T - 1, realized - 1 + r.lag);
      Eigen::MatrixXd yhats;
      if (uses_committees(a)) {
        auto it = by_lag.find(r.lag);
        if (it == by_lag.end())
          it = by_lag.emplace(r.lag, detail::committee_rounds(p, committee_config(cfg, r.lag), t1, last)).first;
        r.committees = it->second;
        yhats.resize(static_cast<Eigen::Index>(r.committees.size()), M);
        for (std::size_t i = 0; i < r.committees.size(); ++i)
          yhats.row(static_cast<Eigen::Index>(i)) = r.committees[i].yhat.transpose();
      } else {
        yhats = p.values.middleRows(static_cast<Eigen::Index>(t1), static_cast<Eigen::Index>(last - t1 + 1));
      }
      AggregatorOptions opt;
      opt.delay = algorithm_delay(a);
      opt.rule = a == Algorithm::efp || a == Algorithm::efp_delayed ? UpdateRule::fictitious_play : UpdateRule::hedge;
      opt.schedule = cfg.schedule;
      opt.b1 = r.b1;
      const Eigen::VectorXd targets = p.target.segment(static_cast<Eigen::Index>(t1), yhats.rows());
      r.run = run_online(targets, yhats, opt);
      r.report = make_report(r.run, r.b1, opt.delay == 1 ? BoundVariant::delayed : BoundVariant::heca);
    }
    for (std::size_t i = 0; i < r.run.forecast.size(); ++i) r.periods.push_back(p.periods[t1 + i]);
    res.results.push_back(std::move(r));
  }
  return res;
}

inline ExperimentResult run_experiment(const ExperimentConfig& cfg) {
  if (cfg.data_path.empty()) throw ValidationError("no data file given");
  return run_experiment(cfg, load_panel(cfg.data_path));
}

// Prefix statistics over realized rounds: cumulative decision loss, the
// best committee's cumulative loss, their difference and the average regret
// with its bound.
struct CumulativeRow {
  std::string period;
  double cumulative_loss = 0.0;
  double best_cumulative = 0.0;
  std::size_t best = 0;  // 0-based
  double difference = 0.0;
  double avg_regret = 0.0;
  std::optional<double> bound;
};

inline std::vector<CumulativeRow> cumulative_table(const AlgorithmResult& r) {
  const Eigen::MatrixXd& L = r.report.committee_loss;
  const bool bounded = r.algorithm != Algorithm::equal_weight;
  const BoundVariant variant = algorithm_delay(r.algorithm) == 1 ? BoundVariant::delayed : BoundVariant::heca;
  std::vector<CumulativeRow> out;
  Eigen::RowVectorXd committee_sum = Eigen::RowVectorXd::Zero(L.cols());
  double sum = 0.0;
  double bbar = 0.0;
  for (Eigen::Index t = 0; t < L.rows(); ++t) {
    sum += r.report.per_round_loss[static_cast<std::size_t>(t)];
    committee_sum += L.row(t);
    bbar = std::max(bbar, L.row(t).maxCoeff());
    CumulativeRow row;
    row.period = r.periods[static_cast<std::size_t>(t)];
    row.cumulative_loss = sum;
    for (Eigen::Index c = 1; c < L.cols(); ++c)
      if (strictly_less(committee_sum[c], committee_sum[static_cast<Eigen::Index>(row.best)]))
        row.best = static_cast<std::size_t>(c);
    row.best_cumulative = committee_sum.minCoeff();
    row.difference = sum - row.best_cumulative;
    row.avg_regret = row.difference / static_cast<double>(t + 1);
    if (bounded && bbar > 0.0)
      row.bound = theorem_bound(static_cast<std::size_t>(L.cols()), static_cast<std::size_t>(t + 1), r.b1, bbar, variant)
                      .value;
    out.push_back(row);
  }
  return out;
}

inline void write_cumulative_csv(std::ostream& out, const std::vector<CumulativeRow>& rows) {
  out << "period,cumulative_loss,best_committee_cumulative_loss,best_committee,difference,avg_regret,bound\n";
  for (const auto& r : rows) {
    out << r.period << ',' << format_double(r.cumulative_loss) << ',' << format_double(r.best_cumulative) << ','
        << r.best + 1 << ',' << format_double(r.difference) << ',' << format_double(r.avg_regret) << ',';
    if (r.bound) out << format_double(*r.bound);
    out << '\n';
  }
}

inline nlohmann::json summary_json(const ExperimentConfig& cfg, const ExperimentResult& res, const AlgorithmResult& r) {
  nlohmann::json j = to_json(r.report);
  j["algorithm"] = to_string(r.algorithm);
  if (r.algorithm == Algorithm::equal_weight) {
    j["lag"] = nullptr;
    j["b1"] = nullptr;
    j["b1_rule"] = nullptr;
  } else {
    j["lag"] = r.lag;
    j["delay"] = algorithm_delay(r.algorithm);
    j["b1"] = r.b1;
    j["b1_rule"] = r.b1_auto ? "auto" : "explicit";
    j["schedule"] = cfg.schedule == Schedule::proof ? "proof" : "pseudocode";
    j["jensen_violations"] = r.run.jensen_violations;
  }
  if (uses_committees(r.algorithm)) {
    j["window"] = cfg.window;
    j["val_window"] = cfg.val_window;
    j["lambda_grid"] = cfg.lambda_grid;
    j["epsilon"] = cfg.epsilon;
    j["backend"] = to_string(cfg.backend);
  }
  j["first_period"] = res.panel.periods[res.first_row];
  j["last_period"] = r.periods.at(r.report.per_round_loss.size() - 1);
  j["forecast_rounds"] = r.run.forecast.size();
  double total = 0.0;
  for (double v : r.report.per_round_loss) total += v;
  j["cumulative_loss"] = total;
  j["experts"] = res.panel.experts;
  return j;
}

// Per-round losses of every algorithm, then the first
// algorithm's loss minus each of the others. Missing rounds stay blank.
inline void write_comparison_csv(std::ostream& out, const ExperimentResult& res) {
  const auto& rs = res.results;
  std::vector<std::string> periods;
  for (const auto& r : rs)
    for (std::size_t i = 0; i < r.report.per_round_loss.size(); ++i)
      if (std::find(periods.begin(), periods.end(), r.periods[i]) == periods.end()) periods.push_back(r.periods[i]);
  std::sort(periods.begin(), periods.end(), [&](const std::string& a, const std::string& b) {
    return period_index(res.panel, a) < period_index(res.panel, b);
  });
  auto loss_at = [&](const AlgorithmResult& r, const std::string& period) -> std::optional<double> {
    for (std::size_t i = 0; i < r.report.per_round_loss.size(); ++i)
      if (r.periods[i] == period) return r.report.per_round_loss[i];
    return std::nullopt;
  };
  out << "period";
  for (const auto& r : rs) out << ',' << to_string(r.algorithm);
  for (std::size_t k = 1; k < rs.size(); ++k) out << ',' << to_string(rs[0].algorithm) << "-" << to_string(rs[k].algorithm);
  out << '\n';
  for (const auto& period : periods) {
    out << period;
    std::vector<std::optional<double>> v;
    for (const auto& r : rs) {
      v.push_back(loss_at(r, period));
      out << ',';
      if (v.back()) out << format_double(*v.back());
    }
    for (std::size_t k = 1; k < rs.size(); ++k) {
      out << ',';
      if (v[0] && v[k]) out << format_double(*v[0] - *v[k]);
    }
    out << '\n';
  }
}

inline std::string render_pretty(const ExperimentResult& res) {
  std::ostringstream os;
  os << std::left << std::setw(15) << "algorithm" << std::right << std::setw(8) << "rounds" << std::setw(16)
     << "cum. loss" << std::setw(16) << "avg regret" << std::setw(16) << "bound" << std::setw(10) << "best c" << '\n';
  for (const auto& r : res.results) {
    double total = 0.0;
    for (double v : r.report.per_round_loss) total += v;
    os << std::left << std::setw(15) << to_string(r.algorithm) << std::right << std::setw(8)
       << r.report.per_round_loss.size() << std::setw(16) << std::setprecision(6) << total << std::setw(16)
       << r.report.avg_regret << std::setw(16);
    if (r.report.bound) os << r.report.bound->value;
    else os << "-";
    os << std::setw(10) << r.report.best_committee + 1 << '\n';
  }
  if (res.diagnostics) os << "condition number: " << std::setprecision(6) << res.diagnostics->condition_number << '\n';
  return os.str();
}

inline void write_artifacts(const ExperimentConfig& cfg, const ExperimentResult& res) {
  namespace fs = std::filesystem;
  const fs::path root(cfg.out_dir);
  fs::create_directories(root);
  auto open = [](const fs::path& path) {
    std::ofstream out(path);
    if (!out) throw ValidationError("cannot write '" + path.string() + "'");
    return out;
  };
  for (const auto& r : res.results) {
    const fs::path dir = root / to_string(r.algorithm);
    fs::create_directories(dir);
    {
      auto out = open(dir / "rounds.csv");
      write_rounds_csv(out, r.run, r.periods);
    }
    {
      auto out = open(dir / "summary.json");
      out << summary_json(cfg, res, r).dump(2) << '\n';
    }
    {
      auto out = open(dir / "cumulative.csv");
      write_cumulative_csv(out, cumulative_table(r));
    }
    if (cfg.audit && uses_committees(r.algorithm)) {
      auto out = open(dir / "committees.jsonl");
      for (const auto& c : r.committees) out << to_json(c, res.panel.experts).dump() << '\n';
    }
  }
  {
    auto out = open(root / "comparison.csv");
    write_comparison_csv(out, res);
  }
  if (res.diagnostics) {
    fs::create_directories(root / "diagnostics");
    {
      auto out = open(root / "diagnostics" / "variances.csv");
      write_variances_csv(out, res.panel, *res.diagnostics);
    }
    {
      auto out = open(root / "diagnostics" / "correlations.csv");
      write_correlations_csv(out, res.panel, *res.diagnostics);
    }
    {
      auto out = open(root / "diagnostics" / "diagnostics.json");
      const double k = res.diagnostics->condition_number;
      nlohmann::json j;
      j["condition_number"] = std::isfinite(k) ? nlohmann::json(k) : nlohmann::json(nullptr);
      out << j.dump(2) << '\n';
    }
  }
}

}  // namespace heca
