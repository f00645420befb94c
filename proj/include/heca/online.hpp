#pragma once

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include <cmath>
#include <cstddef>
#include <deque>
#include <limits>
#include <optional>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "heca/error.hpp"
#include "heca/numeric.hpp"
#include "heca/panel.hpp"

namespace heca {

enum class UpdateRule { hedge, fictitious_play };

// pseudocode: eta for index k+1 is computed right after B_{k+1}, as in the
// printed algorithm. proof: eta_k = rate(B_k, k) is evaluated when used.
// Both give the same sequence; the flag exists so the two readings can be
// compared directly.
enum class Schedule { pseudocode, proof };

struct AggregatorOptions {
  std::size_t delay = 2;  // 2: losses arrive two rounds late; 1: delayed announcements
  UpdateRule rule = UpdateRule::hedge;
  Schedule schedule = Schedule::pseudocode;
  double b1 = 1.0;  // assumed maximal committee loss
};

// eta_k = (2/B) sqrt(log M / k) with two-round delay,
// eta_k = (1/B) sqrt(2 log M / k) with one-round delay.
inline double learning_rate(std::size_t delay, double B, std::size_t k, std::size_t M) {
  const double logm = std::log(static_cast<double>(M));
  const double kk = static_cast<double>(k);
  return delay == 2 ? (2.0 / B) * std::sqrt(logm / kk) : (1.0 / B) * std::sqrt(2.0 * logm / kk);
}

struct AggregatorState {
  std::size_t round = 0;  // round whose distribution is in pi (0 before the first)
  std::size_t num_committees = 0;
  std::size_t delay = 2;
  UpdateRule rule = UpdateRule::hedge;
  Schedule schedule = Schedule::pseudocode;
  Eigen::VectorXd pi;
  Eigen::VectorXd omega;                    // max-normalized weights of the current round
  std::deque<Eigen::VectorXd> log_omega;    // last `delay` rounds, oldest first
  std::vector<double> B;                    // B[k-1] = B_k
  std::vector<double> eta;                  // eta[k-1] = eta_k
  std::vector<Eigen::VectorXd> loss_history;
  Eigen::VectorXd loss_sum;

  double current_B() const { return B.back(); }
  double current_eta() const { return eta.back(); }
};

inline AggregatorState make_state(std::size_t num_committees, const AggregatorOptions& opt) {
  if (num_committees < 1) throw ValidationError("at least one committee is required");
  if (opt.delay != 1 && opt.delay != 2) throw ValidationError("delay must be 1 or 2");
  if (!std::isfinite(opt.b1) || !(opt.b1 > 0.0)) throw ValidationError("B1 must be positive");
  AggregatorState s;
  s.num_committees = num_committees;
  s.delay = opt.delay;
  s.rule = opt.rule;
  s.schedule = opt.schedule;
  const auto M = static_cast<Eigen::Index>(num_committees);
  s.pi = Eigen::VectorXd::Constant(M, 1.0 / static_cast<double>(M));
  s.omega = Eigen::VectorXd::Ones(M);
  s.loss_sum = Eigen::VectorXd::Zero(M);
  s.B.push_back(opt.b1);
  s.eta.push_back(learning_rate(opt.delay, opt.b1, 1, num_committees));
  return s;
}

// Moves the state to the next round and computes its distribution. From
// round delay+1 on, new_loss must be the committee losses of round
// (round - delay); before that it must be absent.
inline void begin_round(AggregatorState& s, const std::optional<Eigen::VectorXd>& new_loss) {
  const std::size_t t = s.round + 1;
  const auto M = static_cast<Eigen::Index>(s.num_committees);
  Eigen::VectorXd log_w = Eigen::VectorXd::Zero(M);

  if (t <= s.delay) {
    if (new_loss) throw ValidationError("no loss is observable in round " + std::to_string(t));
  } else {
    if (!new_loss) throw ValidationError("round " + std::to_string(t) + " needs the losses of round " +
                                         std::to_string(t - s.delay));
    const Eigen::VectorXd& loss = *new_loss;
    if (loss.size() != M) throw ValidationError("loss vector has wrong length");
    if (!loss.allFinite()) throw ValidationError("losses must be finite");
    if ((loss.array() < 0.0).any()) throw ValidationError("losses must be non-negative");

    const std::size_t k = t - s.delay;  // index of the observed loss
    s.loss_history.push_back(loss);
    s.loss_sum += loss;

    double eta_k = 0.0;
    if (s.schedule == Schedule::pseudocode) {
      eta_k = s.eta[k - 1];
    } else {
      eta_k = learning_rate(s.delay, s.B[k - 1], k, s.num_committees);
    }
    const Eigen::VectorXd step =
        s.rule == UpdateRule::hedge ? loss : Eigen::VectorXd(s.loss_sum / static_cast<double>(k));
    log_w = s.log_omega.front() - eta_k * step;

    s.B.push_back(std::max(s.B[k - 1], loss.maxCoeff()));
    s.eta.push_back(learning_rate(s.delay, s.B[k], k + 1, s.num_committees));
  }

  log_w.array() -= log_w.maxCoeff();
  s.omega = log_w.array().exp();
  s.pi = s.omega / s.omega.sum();
  s.log_omega.push_back(log_w);
  if (s.log_omega.size() > s.delay) s.log_omega.pop_front();
  s.round = t;
}

// pi_t' yhat_t for the round prepared by begin_round.
inline double announce(const AggregatorState& s, const Eigen::VectorXd& yhat) {
  if (yhat.size() != static_cast<Eigen::Index>(s.num_committees))
    throw ValidationError("committee forecast vector has wrong length");
  if (!yhat.allFinite()) throw ValidationError("committee forecasts must be finite");
  return s.pi.dot(yhat);
}

namespace detail {

inline std::pair<double, AggregatorState> step_copy(AggregatorState s, const std::optional<Eigen::VectorXd>& loss,
                                                    const Eigen::VectorXd& yhat) {
  begin_round(s, loss);
  const double f = announce(s, yhat);
  return {f, std::move(s)};
}

inline void expect(const AggregatorState& s, std::size_t delay, UpdateRule rule, const char* what) {
  if (s.delay != delay || s.rule != rule) throw ValidationError(std::string("state was not created for ") + what);
}

}  // namespace detail

inline std::pair<double, AggregatorState> heca_step(const AggregatorState& s, const std::optional<Eigen::VectorXd>& loss,
                                                    const Eigen::VectorXd& yhat) {
  detail::expect(s, 2, UpdateRule::hedge, "the two-round-delay hedge update");
  return detail::step_copy(s, loss, yhat);
}

inline std::pair<double, AggregatorState> heca_delayed_step(const AggregatorState& s,
                                                            const std::optional<Eigen::VectorXd>& loss,
                                                            const Eigen::VectorXd& yhat) {
  detail::expect(s, 1, UpdateRule::hedge, "the delayed-announcement hedge update");
  return detail::step_copy(s, loss, yhat);
}

inline std::pair<double, AggregatorState> efp_step(const AggregatorState& s, const std::optional<Eigen::VectorXd>& loss,
                                                   const Eigen::VectorXd& yhat, bool delayed) {
  detail::expect(s, delayed ? 1 : 2, UpdateRule::fictitious_play, "the fictitious-play update");
  return detail::step_copy(s, loss, yhat);
}

// Per-round record of an aggregation run. Rounds are 1-based in the
// algorithm and 0-based in these vectors.
struct OnlineRun {
  std::vector<double> forecast;
  std::vector<double> target;  // NaN where unrealized
  std::vector<double> loss;    // decision-maker loss, NaN where unrealized
  Eigen::MatrixXd committee_loss;  // realized rounds only
  Eigen::MatrixXd pi;              // one row per played round
  std::vector<double> B;           // latest B estimate when the round is played
  std::vector<double> eta;         // latest learning rate when the round is played
  std::size_t jensen_violations = 0;
  std::size_t realized_rounds() const { return static_cast<std::size_t>(committee_loss.rows()); }
};

// (y - pi'yhat)^2 <= sum_c pi_c (y - yhat_c)^2, with a rounding allowance.
inline bool jensen_holds(double y, const Eigen::VectorXd& pi, const Eigen::VectorXd& yhat) {
  const double lhs = std::pow(y - pi.dot(yhat), 2);
  const double rhs = pi.dot((yhat.array() - y).square().matrix());
  return lhs <= rhs + 1e-12 * std::max(1.0, rhs);
}

// Runs the aggregator over committee forecasts yhats (rounds x M). targets
// may end in NaN (unrealized); rounds are played while the loss needed for
// the update is available, so up to `delay` rounds past the last realized
// target still get a forecast.
inline OnlineRun run_online(const Eigen::VectorXd& targets, const Eigen::MatrixXd& yhats, const AggregatorOptions& opt) {
  if (targets.size() != yhats.rows()) throw ValidationError("targets and committee forecasts differ in length");
  if (yhats.rows() == 0) throw ValidationError("no rounds to aggregate");
  std::size_t realized = 0;
  while (realized < static_cast<std::size_t>(targets.size()) && std::isfinite(targets[static_cast<Eigen::Index>(realized)]))
    ++realized;
  for (auto i = static_cast<Eigen::Index>(realized); i < targets.size(); ++i)
    if (std::isfinite(targets[i])) throw ValidationError("unrealized target in the interior of the run");

  const std::size_t T = std::min<std::size_t>(static_cast<std::size_t>(yhats.rows()), realized + opt.delay);
  const auto M = static_cast<std::size_t>(yhats.cols());
  AggregatorState s = make_state(M, opt);

  OnlineRun run;
  run.committee_loss.resize(static_cast<Eigen::Index>(std::min(T, realized)), yhats.cols());
  run.pi.resize(static_cast<Eigen::Index>(T), yhats.cols());
  for (std::size_t t = 1; t <= T; ++t) {
    const auto row = static_cast<Eigen::Index>(t - 1);
    std::optional<Eigen::VectorXd> loss;
    if (t > opt.delay) loss = run.committee_loss.row(static_cast<Eigen::Index>(t - opt.delay - 1)).transpose();
    begin_round(s, loss);
    const Eigen::VectorXd yhat = yhats.row(row).transpose();
    const double f = announce(s, yhat);
    run.forecast.push_back(f);
    run.pi.row(row) = s.pi.transpose();
    run.B.push_back(s.current_B());
    run.eta.push_back(s.current_eta());
    if (t <= realized) {
      const double y = targets[row];
      run.target.push_back(y);
      run.loss.push_back((y - f) * (y - f));
      run.committee_loss.row(row) = (yhat.array() - y).square().matrix().transpose();
      if (!jensen_holds(y, s.pi, yhat)) ++run.jensen_violations;
    } else {
      run.target.push_back(std::numeric_limits<double>::quiet_NaN());
      run.loss.push_back(std::numeric_limits<double>::quiet_NaN());
    }
  }
  return run;
}

struct RegretValue {
  double avg_regret = 0.0;
  std::size_t best = 0;  // 0-based
  double best_average_loss = 0.0;
};

// R_T = mean decision loss - min_c mean committee loss. Ties for the best
// committee (within the tie tolerance) go to the smallest index.
inline RegretValue average_regret(const std::vector<double>& per_round, const Eigen::MatrixXd& committee_loss) {
  if (per_round.empty() || committee_loss.rows() == 0 || committee_loss.cols() == 0)
    throw ValidationError("average regret of an empty run");
  if (static_cast<Eigen::Index>(per_round.size()) != committee_loss.rows())
    throw ValidationError("decision and committee losses differ in length");
  const double T = static_cast<double>(per_round.size());
  double total = 0.0;
  for (double v : per_round) total += v;
  const Eigen::RowVectorXd means = committee_loss.colwise().sum() / T;
  RegretValue r;
  for (Eigen::Index c = 1; c < means.size(); ++c)
    if (strictly_less(means[c], means[static_cast<Eigen::Index>(r.best)])) r.best = static_cast<std::size_t>(c);
  r.best_average_loss = means[static_cast<Eigen::Index>(r.best)];
  r.avg_regret = total / T - means.minCoeff();
  return r;
}

enum class BoundVariant { heca, delayed };
enum class BoundCase { underestimate, overestimate, exact };

inline std::string to_string(BoundCase c) {
  switch (c) {
    case BoundCase::underestimate: return "underestimate";
    case BoundCase::overestimate: return "overestimate";
    default: return "exact";
  }
}

struct BoundValue {
  double value = 0.0;
  BoundCase kind = BoundCase::exact;
  double gamma = 1.0;
};

// Regret bound in terms of the realized maximal loss BbarT and the initial
// guess B1. The delayed-announcement variant is the same value over sqrt(2).
inline BoundValue theorem_bound(std::size_t M, std::size_t T, double B1, double BbarT,
                                BoundVariant variant = BoundVariant::heca) {
  if (M < 1 || T < 1) throw ValidationError("bound needs M >= 1 and T >= 1");
  if (!(B1 > 0.0) || !(BbarT > 0.0) || !std::isfinite(B1) || !std::isfinite(BbarT))
    throw ValidationError("B1 and BbarT must be positive");
  const double rate = BbarT * std::sqrt(std::log(static_cast<double>(M)) / static_cast<double>(T));
  BoundValue b;
  if (BbarT > B1) {
    b.kind = BoundCase::underestimate;
    b.gamma = BbarT / B1;
    b.value = (1.0 + 2.0 * b.gamma) * rate;
  } else if (B1 > BbarT) {
    b.kind = BoundCase::overestimate;
    b.gamma = B1 / BbarT;
    b.value = 3.0 * b.gamma * rate;
  } else {
    b.value = 3.0 * rate;
  }
  if (variant == BoundVariant::delayed) b.value /= std::sqrt(2.0);
  return b;
}

struct RegretReport {
  std::vector<double> per_round_loss;
  Eigen::MatrixXd committee_loss;
  double avg_regret = 0.0;
  std::size_t best_committee = 0;  // 0-based
  double best_average_loss = 0.0;
  double bbar_T = 0.0;
  std::optional<BoundValue> bound;  // absent when every loss is zero
};

inline RegretReport make_report(const OnlineRun& run, double b1, BoundVariant variant) {
  const std::size_t T = run.realized_rounds();
  if (T == 0) throw ValidationError("no realized rounds to report");
  RegretReport r;
  r.per_round_loss.assign(run.loss.begin(), run.loss.begin() + static_cast<std::ptrdiff_t>(T));
  r.committee_loss = run.committee_loss;
  const RegretValue v = average_regret(r.per_round_loss, r.committee_loss);
  r.avg_regret = v.avg_regret;
  r.best_committee = v.best;
  r.best_average_loss = v.best_average_loss;
  r.bbar_T = r.committee_loss.maxCoeff();
  if (r.bbar_T > 0.0)
    r.bound = theorem_bound(static_cast<std::size_t>(r.committee_loss.cols()), T, b1, r.bbar_T, variant);
  return r;
}

// Hedge over raw expert forecasts (one column per expert).
inline RegretReport vanilla_hedge_run(const Eigen::VectorXd& targets, const Eigen::MatrixXd& yhats, double b1,
                                      bool delayed, OnlineRun* run_out = nullptr) {
  AggregatorOptions opt;
  opt.delay = delayed ? 1 : 2;
  opt.b1 = b1;
  OnlineRun run = run_online(targets, yhats, opt);
  RegretReport r = make_report(run, b1, delayed ? BoundVariant::delayed : BoundVariant::heca);
  if (run_out) *run_out = std::move(run);
  return r;
}

struct EqualWeightRun {
  std::vector<double> forecast;
  std::vector<double> loss;
};

inline EqualWeightRun equal_weight_run(const ForecastPanel& panel, PeriodSpan span) {
  if (!panel.complete()) throw ValidationError("equal-weight run requires an imputed panel");
  if (span.last >= panel.num_periods() || span.last < span.first) throw ValidationError("span outside panel");
  EqualWeightRun out;
  for (std::size_t t = span.first; t <= span.last; ++t) {
    if (!panel.realized(t)) throw ValidationError("target not realized at period '" + panel.periods[t] + "'");
    const auto ti = static_cast<Eigen::Index>(t);
    const double f = panel.values.row(ti).mean();
    out.forecast.push_back(f);
    out.loss.push_back((panel.target[ti] - f) * (panel.target[ti] - f));
  }
  return out;
}

// t, forecast, target, loss, pi_1..pi_M, B_t, eta_t, period. Unrealized
// targets, their losses and NaN B/eta entries are left blank.
inline void write_rounds_csv(std::ostream& out, const OnlineRun& run, const std::vector<std::string>& periods = {}) {
  const auto M = run.pi.cols();
  out << "t,forecast,target,loss";
  for (Eigen::Index c = 1; c <= M; ++c) out << ",pi_" << c;
  out << ",B_t,eta_t,period\n";
  for (std::size_t i = 0; i < run.forecast.size(); ++i) {
    const auto row = static_cast<Eigen::Index>(i);
    out << i + 1 << ',' << format_double(run.forecast[i]) << ',';
    if (std::isfinite(run.target[i])) out << format_double(run.target[i]) << ',' << format_double(run.loss[i]);
    else out << ',';
    for (Eigen::Index c = 0; c < M; ++c) out << ',' << format_double(run.pi(row, c));
    for (double v : {run.B[i], run.eta[i]}) {
      out << ',';
      if (std::isfinite(v)) out << format_double(v);
    }
    out << ',';
    if (i < periods.size()) out << periods[i];
    out << '\n';
  }
}

// best_committee is 1-based in the JSON summary.
inline nlohmann::json to_json(const RegretReport& r) {
  nlohmann::json j;
  j["avg_regret"] = r.avg_regret;
  j["best_committee"] = r.best_committee + 1;
  j["best_average_loss"] = r.best_average_loss;
  j["Bbar_T"] = r.bbar_T;
  j["rounds"] = r.per_round_loss.size();
  if (r.bound) {
    j["bound"] = r.bound->value;
    j["bound_case"] = to_string(r.bound->kind);
    j["gamma"] = r.bound->gamma;
  } else {
    j["bound"] = nullptr;
    j["bound_case"] = nullptr;
    j["gamma"] = nullptr;
  }
  return j;
}

}  // namespace heca
