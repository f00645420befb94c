#pragma once

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "heca/error.hpp"
#include "heca/numeric.hpp"

namespace heca {

// One estimation window: targets y (length r) and forecasts F (r x M), with
// the normal-equation blocks cached for repeated subset solves.
class RidgeWindow {
 public:
  RidgeWindow(Eigen::VectorXd y, Eigen::MatrixXd f) : y_(std::move(y)), f_(std::move(f)) {
    if (y_.size() < 1) throw ValidationError("window must contain at least one period");
    if (f_.rows() != y_.size()) throw ValidationError("forecast rows do not match target length");
    if (f_.cols() < 1) throw ValidationError("window has no experts");
    if (!y_.allFinite() || !f_.allFinite()) throw ValidationError("window data must be finite");
    gram_ = f_.transpose() * f_;
    fty_ = f_.transpose() * y_;
  }

  const Eigen::VectorXd& y() const { return y_; }
  const Eigen::MatrixXd& f() const { return f_; }
  const Eigen::MatrixXd& gram() const { return gram_; }
  const Eigen::VectorXd& fty() const { return fty_; }
  std::size_t num_experts() const { return static_cast<std::size_t>(f_.cols()); }
  std::size_t length() const { return static_cast<std::size_t>(y_.size()); }

  // Sum of squared residuals, evaluated from the residual vector itself so
  // that exact fits come out as exactly zero.
  double sse(const Eigen::VectorXd& weights) const { return (y_ - f_ * weights).squaredNorm(); }

  double sse(const Subset& subset, const Eigen::VectorXd& local) const {
    Eigen::VectorXd r = y_;
    for (std::size_t i = 0; i < subset.size(); ++i)
      r -= local[static_cast<Eigen::Index>(i)] * f_.col(static_cast<Eigen::Index>(subset[i]));
    return r.squaredNorm();
  }

 private:
  Eigen::VectorXd y_;
  Eigen::MatrixXd f_;
  Eigen::MatrixXd gram_;
  Eigen::VectorXd fty_;
};

struct SubsetRidgeProblem {
  Eigen::VectorXd y;
  Eigen::MatrixXd f;
  Subset subset;
  double lambda = 0.0;
  double epsilon = kMachineEpsilonWeight;
};

struct SubsetRidgeSolution {
  Eigen::VectorXd weights;  // length M, zero off the subset
  double objective = 0.0;
  double kkt_residual = 0.0;
  std::size_t iterations = 0;
};

inline nlohmann::json to_json(const SubsetRidgeSolution& s) {
  return {{"weights", std::vector<double>(s.weights.data(), s.weights.data() + s.weights.size())},
          {"objective", s.objective},
          {"kkt_residual", s.kkt_residual}};
}

// Largest tolerated KKT violation of a returned solution.
inline constexpr double kKktTolerance = 1e-8;

// Penalized objective with the shrinkage penalty taken over the subset:
// ||y - F b||^2 + lambda * sum_{j in subset} (b_j - 1/c)^2.
inline double subset_objective(const RidgeWindow& w, const Subset& subset, const Eigen::VectorXd& weights,
                               double lambda) {
  const double target = 1.0 / static_cast<double>(subset.size());
  double pen = 0.0;
  for (std::size_t j : subset) {
    const double d = weights[static_cast<Eigen::Index>(j)] - target;
    pen += d * d;
  }
  return w.sse(weights) + lambda * pen;
}

namespace detail {

inline void check_subset(const Subset& subset, std::size_t M) {
  if (subset.empty()) throw ValidationError("subset must contain at least one expert");
  for (std::size_t i = 0; i < subset.size(); ++i) {
    if (subset[i] >= M) throw ValidationError("subset index out of range");
    if (i > 0 && subset[i] <= subset[i - 1]) throw ValidationError("subset must be sorted and duplicate-free");
  }
}

// Lower bound actually imposed in the QP. Subnormal bounds are solved as 0
// and restored afterwards by snap_to_lower_bound.
inline double effective_lower_bound(double epsilon) {
  return epsilon >= std::numeric_limits<double>::min() ? epsilon : 0.0;
}

// Orthonormal basis of {v in R^n : sum(v) = 0} (Helmert contrasts).
inline Eigen::MatrixXd sum_zero_basis(Eigen::Index n) {
  Eigen::MatrixXd z = Eigen::MatrixXd::Zero(n, n - 1);
  for (Eigen::Index k = 0; k + 1 < n; ++k) {
    const double kk = static_cast<double>(k + 1);
    const double norm = std::sqrt(kk * (kk + 1.0));
    z.col(k).head(k + 1).setConstant(1.0 / norm);
    z(k + 1, k) = -kk / norm;
  }
  return z;
}

// Minimum-norm solution of the symmetric positive semidefinite system a x = b.
// Cholesky when well conditioned; otherwise an eigen pseudo-inverse with
// relative pivot threshold 1e-12.
inline Eigen::VectorXd solve_psd(const Eigen::MatrixXd& a, const Eigen::VectorXd& b) {
  const double scale = std::max(a.diagonal().cwiseAbs().maxCoeff(), std::numeric_limits<double>::min());
  Eigen::LLT<Eigen::MatrixXd> llt(a);
  if (llt.info() == Eigen::Success) {
    const auto& l = llt.matrixLLT();
    if ((l.diagonal().array().square() > 1e-12 * scale).all()) return llt.solve(b);
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(a);
  const Eigen::VectorXd& ev = eig.eigenvalues();
  const double cutoff = 1e-12 * std::max(ev.cwiseAbs().maxCoeff(), std::numeric_limits<double>::min());
  Eigen::VectorXd coef = eig.eigenvectors().transpose() * b;
  for (Eigen::Index i = 0; i < ev.size(); ++i) coef[i] = ev[i] > cutoff ? coef[i] / ev[i] : 0.0;
  return eig.eigenvectors() * coef;
}

struct SimplexQpResult {
  Eigen::VectorXd b;  // local to the index set
  std::size_t iterations = 0;
};

// Primal active-set method for
//   min ||y - F_I b||^2 + lambda ||b - target 1||^2
//   s.t. sum(b) = 1, b >= lower
// over the columns `idx` of the window. Upper bounds b <= 1 are implied by
// the other constraints. The equality is eliminated on each working set by
// parameterizing the free block as b0 + Z z with Z a sum-zero basis.
// `warm` (local, feasible) seeds the iterate; otherwise equal weights.
inline SimplexQpResult solve_simplex_qp(const RidgeWindow& w, const Subset& idx, double lambda, double target,
                                        double lower, const Eigen::VectorXd* warm = nullptr) {
  const auto n = static_cast<Eigen::Index>(idx.size());
  if (static_cast<double>(n) * lower > 1.0) throw InfeasibleError("lower bound times subset size exceeds 1");

  Eigen::MatrixXd h(n, n);
  Eigen::VectorXd g(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto gi = static_cast<Eigen::Index>(idx[static_cast<std::size_t>(i)]);
    g[i] = 2.0 * (w.fty()[gi] + lambda * target);
    for (Eigen::Index j = 0; j < n; ++j)
      h(i, j) = 2.0 * w.gram()(gi, static_cast<Eigen::Index>(idx[static_cast<std::size_t>(j)]));
    h(i, i) += 2.0 * lambda;
  }
  const double scale = std::max({1.0, g.cwiseAbs().maxCoeff(), h.cwiseAbs().maxCoeff()});
  const double dual_tol = 1e-11 * scale;

  SimplexQpResult res;
  Eigen::VectorXd b(n);
  std::vector<char> fixed(static_cast<std::size_t>(n), 0);
  bool use_warm = false;
  if (warm && warm->size() == n && warm->allFinite() && std::abs(warm->sum() - 1.0) <= 1e-12 &&
      (warm->array() >= lower).all())
    use_warm = true;
  if (use_warm) {
    b = *warm;
    for (Eigen::Index i = 0; i < n; ++i) fixed[static_cast<std::size_t>(i)] = b[i] <= lower;
  } else {
    b.setConstant(1.0 / static_cast<double>(n));
  }
  if (n == 1) {
    res.b = Eigen::VectorXd::Ones(1);
    return res;
  }

  const std::size_t max_iter = 50 + 20 * static_cast<std::size_t>(n);
  std::vector<Eigen::Index> free_idx;
  std::vector<Eigen::Index> fixed_idx;
  for (res.iterations = 1; res.iterations <= max_iter; ++res.iterations) {
    free_idx.clear();
    fixed_idx.clear();
    for (Eigen::Index i = 0; i < n; ++i) (fixed[static_cast<std::size_t>(i)] ? fixed_idx : free_idx).push_back(i);
    const auto nf = static_cast<Eigen::Index>(free_idx.size());

    // Equality-constrained minimizer on the current working set.
    Eigen::VectorXd target_b = b;
    for (Eigen::Index i : fixed_idx) target_b[i] = lower;
    if (nf == 1) {
      target_b[free_idx[0]] = 1.0 - lower * static_cast<double>(fixed_idx.size());
    } else if (nf > 1) {
      const double mass = 1.0 - lower * static_cast<double>(fixed_idx.size());
      const double b0 = mass / static_cast<double>(nf);
      Eigen::MatrixXd hff(nf, nf);
      Eigen::VectorXd rhs(nf);
      for (Eigen::Index a = 0; a < nf; ++a) {
        double r = g[free_idx[static_cast<std::size_t>(a)]];
        for (Eigen::Index j : fixed_idx) r -= h(free_idx[static_cast<std::size_t>(a)], j) * lower;
        for (Eigen::Index c = 0; c < nf; ++c) {
          hff(a, c) = h(free_idx[static_cast<std::size_t>(a)], free_idx[static_cast<std::size_t>(c)]);
          r -= hff(a, c) * b0;
        }
        rhs[a] = r;
      }
      const Eigen::MatrixXd z = sum_zero_basis(nf);
      const Eigen::VectorXd step = z * solve_psd(z.transpose() * hff * z, z.transpose() * rhs);
      for (Eigen::Index a = 0; a < nf; ++a) target_b[free_idx[static_cast<std::size_t>(a)]] = b0 + step[a];
    }

    // Ratio test toward the working-set minimizer.
    double alpha = 1.0;
    Eigen::Index blocking = -1;
    for (Eigen::Index i : free_idx) {
      const double p = target_b[i] - b[i];
      if (p < 0.0 && target_b[i] < lower) {
        const double a = (b[i] - lower) / -p;
        if (a < alpha) {
          alpha = a;
          blocking = i;
        }
      }
    }
    if (blocking >= 0) {
      for (Eigen::Index i : free_idx) b[i] += alpha * (target_b[i] - b[i]);
      b[blocking] = lower;
      fixed[static_cast<std::size_t>(blocking)] = 1;
      continue;
    }
    b = target_b;

    // Multipliers of the active lower bounds.
    const Eigen::VectorXd grad = h * b - g;
    double mu = 0.0;
    if (!free_idx.empty()) {
      for (Eigen::Index i : free_idx) mu += grad[i];
      mu /= static_cast<double>(free_idx.size());
    } else {
      mu = std::numeric_limits<double>::infinity();
      for (Eigen::Index i : fixed_idx) mu = std::min(mu, grad[i]);
    }
    Eigen::Index release = -1;
    double worst = -dual_tol;
    for (Eigen::Index i : fixed_idx) {
      const double nu = grad[i] - mu;
      if (nu < worst) {
        worst = nu;
        release = i;
      }
    }
    if (release < 0) {
      res.b = b;
      return res;
    }
    fixed[static_cast<std::size_t>(release)] = 0;
  }
  throw NumericalError("active-set QP did not converge");
}

}  // namespace detail

// Max KKT violation of `weights` for the subset problem, with stationarity
// and complementarity scaled by max(1, |gradient data|, |Hessian|).
inline double kkt_residual(const RidgeWindow& w, const Subset& subset, double lambda, double epsilon,
                           const Eigen::VectorXd& weights) {
  const std::size_t M = w.num_experts();
  detail::check_subset(subset, M);
  if (static_cast<std::size_t>(weights.size()) != M) throw ValidationError("weight vector has wrong length");
  const auto n = static_cast<Eigen::Index>(subset.size());
  const double target = 1.0 / static_cast<double>(n);

  double primal = std::abs(weights.sum() - 1.0);
  std::vector<char> member(M, 0);
  for (std::size_t j : subset) member[j] = 1;
  for (std::size_t j = 0; j < M; ++j) {
    const double bj = weights[static_cast<Eigen::Index>(j)];
    if (!member[j]) primal = std::max(primal, std::abs(bj));
    else primal = std::max({primal, epsilon - bj, bj - 1.0});
  }

  Eigen::VectorXd grad(n);
  Eigen::VectorXd b(n);
  double scale = 1.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto gi = static_cast<Eigen::Index>(subset[static_cast<std::size_t>(i)]);
    b[i] = weights[gi];
    scale = std::max(scale, 2.0 * std::abs(w.fty()[gi] + lambda * target));
  }
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto gi = static_cast<Eigen::Index>(subset[static_cast<std::size_t>(i)]);
    double s = -w.fty()[gi];
    for (Eigen::Index j = 0; j < n; ++j) {
      const double gij = w.gram()(gi, static_cast<Eigen::Index>(subset[static_cast<std::size_t>(j)]));
      s += gij * b[j];
      scale = std::max(scale, 2.0 * std::abs(gij));
    }
    grad[i] = 2.0 * s + 2.0 * lambda * (b[i] - target);
  }
  scale = std::max(scale, 2.0 * lambda);

  const double bound_slack = 1e-12;
  Eigen::Index top = 0;
  b.maxCoeff(&top);
  double mu = grad[top];
  if (b[top] - epsilon <= bound_slack) mu = grad.minCoeff();
  double dual = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double gap = b[i] - epsilon;
    const double nu = grad[i] - mu;
    if (gap > bound_slack) dual = std::max(dual, std::abs(nu));
    else dual = std::max({dual, -nu, std::abs(nu * gap)});
  }
  return std::max(primal, dual / scale);
}

// Global minimizer of the penalized least squares over
// {b : b_j = 0 off subset, epsilon <= b_j <= 1 on subset, sum(b) = 1}.
// `warm` is an optional length-M feasible start (e.g. the previous lambda).
inline SubsetRidgeSolution solve_subset_ridge(const RidgeWindow& w, const Subset& subset, double lambda,
                                              double epsilon, const Eigen::VectorXd* warm = nullptr) {
  const std::size_t M = w.num_experts();
  detail::check_subset(subset, M);
  if (!std::isfinite(lambda) || lambda < 0.0) throw ValidationError("lambda must be finite and non-negative");
  if (!std::isfinite(epsilon) || !(epsilon > 0.0)) throw ValidationError("epsilon must be positive");
  const auto c = static_cast<double>(subset.size());
  if (c * epsilon > 1.0) throw InfeasibleError("infeasible: subset size times epsilon exceeds 1");

  const double lower = detail::effective_lower_bound(epsilon);
  Eigen::VectorXd local_warm;
  const Eigen::VectorXd* warm_ptr = nullptr;
  if (warm && static_cast<std::size_t>(warm->size()) == M) {
    local_warm.resize(static_cast<Eigen::Index>(subset.size()));
    for (std::size_t i = 0; i < subset.size(); ++i)
      local_warm[static_cast<Eigen::Index>(i)] = (*warm)[static_cast<Eigen::Index>(subset[i])];
    warm_ptr = &local_warm;
  }
  auto qp = detail::solve_simplex_qp(w, subset, lambda, 1.0 / c, lower, warm_ptr);

  // Restore the subnormal lower bound; the deficit (at most c * epsilon)
  // comes off the largest weight.
  Eigen::Index top = 0;
  qp.b.maxCoeff(&top);
  double deficit = 0.0;
  for (Eigen::Index i = 0; i < qp.b.size(); ++i)
    if (qp.b[i] < epsilon) {
      deficit += epsilon - qp.b[i];
      qp.b[i] = epsilon;
    }
  qp.b[top] -= deficit;

  SubsetRidgeSolution sol;
  sol.weights = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(M));
  for (std::size_t i = 0; i < subset.size(); ++i)
    sol.weights[static_cast<Eigen::Index>(subset[i])] = qp.b[static_cast<Eigen::Index>(i)];
  sol.objective = subset_objective(w, subset, sol.weights, lambda);
  sol.iterations = qp.iterations;
  sol.kkt_residual = kkt_residual(w, subset, lambda, epsilon, sol.weights);
  if (sol.kkt_residual > kKktTolerance)
    throw NumericalError("subset ridge solution failed its KKT check (residual " +
                         format_double(sol.kkt_residual) + ")");
  return sol;
}

inline SubsetRidgeSolution solve_subset_ridge(const SubsetRidgeProblem& p) {
  RidgeWindow w(p.y, p.f);
  return solve_subset_ridge(w, p.subset, p.lambda, p.epsilon);
}

}  // namespace heca
