#pragma once

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "heca/error.hpp"
#include "heca/numeric.hpp"
#include "heca/panel.hpp"
#include "heca/parallel.hpp"
#include "heca/ridge_qp.hpp"
#include "heca/subset_select.hpp"

namespace heca {

inline std::vector<double> default_lambda_grid() { return parse_grid("0.01:0.01:2"); }

struct CommitteeConfig {
  std::size_t window = 16;      // r
  std::size_t val_window = 1;   // r_lambda
  std::vector<double> lambda_grid = default_lambda_grid();
  std::size_t lag = 2;          // l
  double epsilon = kMachineEpsilonWeight;
  Backend backend = Backend::branch_bound;
  bool use_cache = true;
  std::size_t threads = 0;      // 0 = thread_count()
};

inline void validate(const CommitteeConfig& cfg, std::size_t num_experts) {
  if (cfg.window < 1) throw ValidationError("window must be at least 1");
  if (cfg.val_window < 1) throw ValidationError("validation window must be at least 1");
  if (cfg.lag != 1 && cfg.lag != 2) throw ValidationError("lag must be 1 or 2");
  if (cfg.lambda_grid.empty()) throw ValidationError("lambda grid is empty");
  for (std::size_t i = 0; i < cfg.lambda_grid.size(); ++i) {
    const double v = cfg.lambda_grid[i];
    if (!std::isfinite(v) || !(v > 0.0)) throw ValidationError("lambda grid values must be positive");
    if (i > 0 && !(v > cfg.lambda_grid[i - 1])) throw ValidationError("lambda grid must be strictly ascending");
  }
  if (!std::isfinite(cfg.epsilon) || !(cfg.epsilon > 0.0)) throw ValidationError("epsilon must be positive");
  if (static_cast<double>(num_experts) * cfg.epsilon > 1.0)
    throw InfeasibleError("infeasible: " + std::to_string(num_experts) + " experts times epsilon exceeds 1");
}

// Earliest round (0-based row) whose estimation window exists.
inline std::size_t first_fit_round(const CommitteeConfig& cfg) { return cfg.lag + cfg.window - 1; }

// Earliest round at which committee forecasts can be formed: validation fits
// at rounds t - s, s = l..l+r_lambda-1, each need their own window. A
// one-point grid needs no validation.
inline std::size_t first_committee_round(const CommitteeConfig& cfg) {
  if (cfg.lambda_grid.size() == 1) return first_fit_round(cfg);
  return 2 * cfg.lag + cfg.window + cfg.val_window - 2;
}

// Estimation window for round t: rows t-l-r+1 .. t-l, oldest first.
inline RidgeWindow committee_window(const ForecastPanel& panel, std::size_t t, const CommitteeConfig& cfg) {
  if (!panel.complete()) throw ValidationError("committees require an imputed panel");
  if (t >= panel.num_periods()) throw ValidationError("round " + std::to_string(t) + " outside panel");
  const std::size_t first = first_fit_round(cfg);
  if (t < first)
    throw BurnInError("round " + std::to_string(t) + " precedes the estimation window; first feasible round is " +
                          std::to_string(first),
                      first);
  const std::size_t last_row = t - cfg.lag;
  if (last_row >= panel.realized_count())
    throw ValidationError("target not realized at period '" + panel.periods[last_row] + "'");
  const auto begin = static_cast<Eigen::Index>(last_row + 1 - cfg.window);
  const auto n = static_cast<Eigen::Index>(cfg.window);
  return RidgeWindow(panel.target.segment(begin, n), panel.values.middleRows(begin, n));
}

inline CardinalitySolution fit_committee(const ForecastPanel& panel, std::size_t t, std::size_t c, double lambda,
                                         const CommitteeConfig& cfg) {
  return solve_cardinality(committee_window(panel, t, cfg), c, lambda, cfg.epsilon, cfg.backend);
}

struct CommitteeForecasts {
  std::size_t t = 0;
  std::string period;
  Eigen::VectorXd yhat;            // entry c-1 is committee c's forecast
  std::vector<Subset> members;     // 0-based expert indices
  Eigen::VectorXd lambda_hat;
  Eigen::MatrixXd weights;         // row c-1 = committee c's weights
};

// Audit record; members are reported by expert name.
inline nlohmann::json to_json(const CommitteeForecasts& r, const std::vector<std::string>& experts) {
  nlohmann::json members = nlohmann::json::array();
  for (const auto& m : r.members) {
    nlohmann::json names = nlohmann::json::array();
    for (std::size_t j : m) names.push_back(experts.at(j));
    members.push_back(std::move(names));
  }
  nlohmann::json weights = nlohmann::json::array();
  for (Eigen::Index c = 0; c < r.weights.rows(); ++c) {
    std::vector<double> row(static_cast<std::size_t>(r.weights.cols()));
    for (Eigen::Index j = 0; j < r.weights.cols(); ++j) row[static_cast<std::size_t>(j)] = r.weights(c, j);
    weights.push_back(row);
  }
  return {{"t", r.t},
          {"period", r.period},
          {"lambda_hat", std::vector<double>(r.lambda_hat.data(), r.lambda_hat.data() + r.lambda_hat.size())},
          {"members", members},
          {"weights", weights},
          {"yhat", std::vector<double>(r.yhat.data(), r.yhat.data() + r.yhat.size())}};
}

// Rolling committee formation over one panel. Fits over the whole lambda
// grid are memoized per (round, c), so the validation step at round t reuses
// the paths computed when earlier rounds were formed.
class CommitteeEngine {
 public:
  CommitteeEngine(ForecastPanel panel, CommitteeConfig cfg) : panel_(std::move(panel)), cfg_(std::move(cfg)) {
    validate(cfg_, panel_.num_experts());
    if (!panel_.complete()) throw ValidationError("committees require an imputed panel");
    if (cfg_.threads == 0) cfg_.threads = thread_count();
  }

  const ForecastPanel& panel() const { return panel_; }
  const CommitteeConfig& config() const { return cfg_; }
  std::size_t num_committees() const { return panel_.num_experts(); }
  std::size_t first_round() const { return first_committee_round(cfg_); }

  // Fits at round t for every lambda in the grid.
  const std::vector<CardinalitySolution>& path(std::size_t t, std::size_t c) {
    ensure({{t, c}});
    return cache_.at({t, c});
  }

  std::size_t select_lambda_index(std::size_t t, std::size_t c) {
    const std::size_t k = select_index(t, c);
    if (!cfg_.use_cache) cache_.clear();
    return k;
  }

  double select_lambda(std::size_t t, std::size_t c) { return cfg_.lambda_grid[select_lambda_index(t, c)]; }

  CommitteeForecasts round(std::size_t t) {
    const std::size_t M = num_committees();
    const std::size_t first = first_round();
    if (t < first)
      throw BurnInError("round " + std::to_string(t) + " is inside the burn-in; first feasible round is " +
                            std::to_string(first),
                        first);
    std::vector<std::pair<std::size_t, std::size_t>> need;
    for (std::size_t c = 1; c <= M; ++c) {
      need.emplace_back(t, c);
      if (cfg_.lambda_grid.size() > 1)
        for (std::size_t s = cfg_.lag; s < cfg_.lag + cfg_.val_window; ++s) need.emplace_back(t - s, c);
    }
    ensure(need);

    CommitteeForecasts out;
    out.t = t;
    out.period = panel_.periods[t];
    out.yhat.resize(static_cast<Eigen::Index>(M));
    out.lambda_hat.resize(static_cast<Eigen::Index>(M));
    out.weights = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(M), static_cast<Eigen::Index>(M));
    const Eigen::VectorXd ft = panel_.values.row(static_cast<Eigen::Index>(t)).transpose();
    for (std::size_t c = 1; c <= M; ++c) {
      const std::size_t k = select_index(t, c);
      const CardinalitySolution& sol = cache_.at({t, c})[k];
      const auto ci = static_cast<Eigen::Index>(c - 1);
      out.lambda_hat[ci] = cfg_.lambda_grid[k];
      out.members.push_back(sol.subset);
      out.weights.row(ci) = sol.weights.transpose();
      out.yhat[ci] = combine(ft, sol);
    }

    if (!cfg_.use_cache) {
      cache_.clear();
    } else {
      // The next round only needs paths from round t + 1 - l - r_lambda + 1 on.
      const std::size_t keep_from = t + 2 > cfg_.lag + cfg_.val_window ? t + 2 - cfg_.lag - cfg_.val_window : 0;
      for (auto it = cache_.begin(); it != cache_.end();)
        it = it->first.first < keep_from ? cache_.erase(it) : std::next(it);
    }
    return out;
  }

 private:
  // Combination over the committee's support only, so that zero weights
  // never touch the forecasts.
  static double combine(const Eigen::VectorXd& f, const CardinalitySolution& sol) {
    double v = 0.0;
    for (std::size_t j : sol.subset) v += f[static_cast<Eigen::Index>(j)] * sol.weights[static_cast<Eigen::Index>(j)];
    return v;
  }

  std::size_t select_index(std::size_t t, std::size_t c) {
    if (cfg_.lambda_grid.size() == 1) return 0;
    const std::size_t first = first_round();
    if (t < first)
      throw BurnInError("lambda validation at round " + std::to_string(t) +
                            " lacks history; first feasible round is " + std::to_string(first),
                        first);
    std::vector<std::pair<std::size_t, std::size_t>> need;
    for (std::size_t s = cfg_.lag; s < cfg_.lag + cfg_.val_window; ++s) need.emplace_back(t - s, c);
    ensure(need);

    std::size_t best = 0;
    double best_loss = 0.0;
    for (std::size_t k = 0; k < cfg_.lambda_grid.size(); ++k) {
      double loss = 0.0;
      for (std::size_t s = cfg_.lag; s < cfg_.lag + cfg_.val_window; ++s) {
        const auto u = static_cast<Eigen::Index>(t - s);
        const Eigen::VectorXd fu = panel_.values.row(u).transpose();
        const double e = panel_.target[u] - combine(fu, cache_.at({t - s, c})[k]);
        loss += e * e;
      }
      if (k == 0 || strictly_less(loss, best_loss)) {
        best = k;
        best_loss = loss;
      }
    }
    return best;
  }

  void ensure(const std::vector<std::pair<std::size_t, std::size_t>>& keys) {
    std::vector<std::pair<std::size_t, std::size_t>> missing;
    for (const auto& key : keys)
      if (!cache_.count(key) && std::find(missing.begin(), missing.end(), key) == missing.end())
        missing.push_back(key);
    if (missing.empty()) return;

    std::vector<RidgeWindow> windows;
    windows.reserve(missing.size());
    for (const auto& [t, c] : missing) windows.push_back(committee_window(panel_, t, cfg_));

    const std::size_t L = cfg_.lambda_grid.size();
    std::vector<std::vector<CardinalitySolution>> paths(missing.size(), std::vector<CardinalitySolution>(L));
    if (cfg_.backend == Backend::exhaustive) {
      ExhaustiveOptions opt;
      opt.threads = 1;
      parallel_for(
          missing.size(),
          [&](std::size_t i) {
            paths[i] = solve_exhaustive_path(windows[i], missing[i].second, cfg_.lambda_grid, cfg_.epsilon, opt);
          },
          cfg_.threads);
    } else {
      parallel_for(
          missing.size() * L,
          [&](std::size_t job) {
            const std::size_t i = job / L;
            const std::size_t k = job % L;
            paths[i][k] = solve_branch_bound(windows[i], missing[i].second, cfg_.lambda_grid[k], cfg_.epsilon);
          },
          cfg_.threads);
    }
    for (std::size_t i = 0; i < missing.size(); ++i) cache_.emplace(missing[i], std::move(paths[i]));
  }

  ForecastPanel panel_;
  CommitteeConfig cfg_;
  std::map<std::pair<std::size_t, std::size_t>, std::vector<CardinalitySolution>> cache_;
};

// One-shot helpers; a CommitteeEngine is cheaper when iterating rounds.
inline double select_lambda(const ForecastPanel& panel, std::size_t t, std::size_t c, const CommitteeConfig& cfg) {
  CommitteeEngine engine(panel, cfg);
  return engine.select_lambda(t, c);
}

inline CommitteeForecasts committee_round(const ForecastPanel& panel, std::size_t t, const CommitteeConfig& cfg) {
  CommitteeEngine engine(panel, cfg);
  return engine.round(t);
}

}  // namespace heca
