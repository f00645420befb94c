#pragma once

// Reference computations used by the tests. None of them call into the
// library's solvers; they only share the data layout.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <vector>

namespace oracle {

using Subset = std::vector<std::size_t>;

inline double uniform01(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

inline double uniform(std::mt19937_64& rng, double lo, double hi) { return lo + (hi - lo) * uniform01(rng); }

inline std::size_t uniform_int(std::mt19937_64& rng, std::size_t lo, std::size_t hi) {
  return lo + static_cast<std::size_t>(rng() % (hi - lo + 1));
}

inline Eigen::MatrixXd random_matrix(std::mt19937_64& rng, Eigen::Index rows, Eigen::Index cols, double lo, double hi) {
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j)
    for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = uniform(rng, lo, hi);
  return m;
}

// Objective of the subset problem at local weights b (one per subset entry),
// straight from the residuals.
inline double subset_objective(const Eigen::VectorXd& y, const Eigen::MatrixXd& f, const Subset& s,
                               const Eigen::VectorXd& b, double lambda) {
  const double target = 1.0 / static_cast<double>(s.size());
  Eigen::VectorXd r = y;
  double pen = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    r -= b[static_cast<Eigen::Index>(i)] * f.col(static_cast<Eigen::Index>(s[i]));
    pen += (b[static_cast<Eigen::Index>(i)] - target) * (b[static_cast<Eigen::Index>(i)] - target);
  }
  return r.squaredNorm() + lambda * pen;
}

struct GridResult {
  Eigen::VectorXd b;  // local weights
  double objective = std::numeric_limits<double>::infinity();
};

namespace detail {

// q(b) = b'Hb - 2g'b + k on the simplex, b = (x_1..x_{n-1}, 1 - sum x).
struct Quadratic {
  Eigen::MatrixXd H;
  Eigen::VectorXd g;
  double k = 0.0;
  double operator()(const Eigen::VectorXd& b) const { return b.dot(H * b) - 2.0 * g.dot(b) + k; }
};

// Exhaustive scan of the lattice {lo_i + step * j_i} intersected with the
// simplex, for the first n-1 coordinates; the last one is 1 - sum.
inline void scan(const Quadratic& q, const Eigen::VectorXd& lo, const Eigen::VectorXd& hi, double step,
                 GridResult& best) {
  const Eigen::Index n = q.H.rows();
  Eigen::VectorXd b(n);
  std::vector<long> count(static_cast<std::size_t>(n - 1));
  for (Eigen::Index i = 0; i + 1 < n; ++i)
    count[static_cast<std::size_t>(i)] = static_cast<long>(std::floor((hi[i] - lo[i]) / step + 1e-9)) + 1;

  // Innermost coordinate: along the line x_{n-2} -> x_{n-2} + step with the
  // last weight absorbing the change, q is quadratic in the step index, so
  // it is evaluated by second differences.
  std::vector<long> idx(static_cast<std::size_t>(n - 1), 0);
  const Eigen::Index inner = n - 2;
  Eigen::VectorXd dir = Eigen::VectorXd::Zero(n);
  dir[inner] = 1.0;
  dir[n - 1] = -1.0;
  const double second = 2.0 * step * step * dir.dot(q.H * dir);
  while (true) {
    double rest = 1.0;
    for (Eigen::Index i = 0; i < inner; ++i) {
      b[i] = lo[i] + step * static_cast<double>(idx[static_cast<std::size_t>(i)]);
      rest -= b[i];
    }
    if (rest >= -1e-12) {
      b[inner] = lo[inner];
      b[n - 1] = rest - b[inner];
      double val = q(b);
      double first = 2.0 * step * dir.dot(q.H * b) - 2.0 * step * q.g.dot(dir) + 0.5 * second;
      for (long j = 0; j < count[static_cast<std::size_t>(inner)]; ++j) {
        const double xi = lo[inner] + step * static_cast<double>(j);
        if (rest - xi < -1e-12) break;
        if (val < best.objective) {
          best.objective = val;
          best.b = b;
          best.b[inner] = xi;
          best.b[n - 1] = std::max(0.0, rest - xi);
        }
        val += first;
        first += second;
      }
    }
    Eigen::Index d = inner - 1;
    while (d >= 0) {
      auto& k = idx[static_cast<std::size_t>(d)];
      if (++k < count[static_cast<std::size_t>(d)]) break;
      k = 0;
      --d;
    }
    if (d < 0) break;
  }
}

}  // namespace detail

// Minimum of the subset ridge objective over the simplex on the lattice of
// resolution 1e-3, refined twice in a window around the incumbent (1e-4,
// then 1e-5). Intended for subsets of 2 to 4 experts.
inline GridResult grid_search_simplex(const Eigen::VectorXd& y, const Eigen::MatrixXd& f, const Subset& s,
                                      double lambda) {
  const auto n = static_cast<Eigen::Index>(s.size());
  GridResult best;
  if (n == 1) {
    best.b = Eigen::VectorXd::Ones(1);
    best.objective = subset_objective(y, f, s, best.b, lambda);
    return best;
  }
  Eigen::MatrixXd fs(y.size(), n);
  for (Eigen::Index i = 0; i < n; ++i) fs.col(i) = f.col(static_cast<Eigen::Index>(s[static_cast<std::size_t>(i)]));
  const double target = 1.0 / static_cast<double>(n);
  detail::Quadratic q;
  q.H = fs.transpose() * fs + lambda * Eigen::MatrixXd::Identity(n, n);
  q.g = fs.transpose() * y + Eigen::VectorXd::Constant(n, lambda * target);
  q.k = y.squaredNorm() + lambda * static_cast<double>(n) * target * target;

  detail::scan(q, Eigen::VectorXd::Zero(n), Eigen::VectorXd::Ones(n), 1e-3, best);
  for (double step : {1e-4, 1e-5}) {
    const double half = 20.0 * step;
    Eigen::VectorXd lo(n), hi(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      lo[i] = std::max(0.0, best.b[i] - half);
      hi[i] = std::min(1.0, best.b[i] + half);
    }
    detail::scan(q, lo, hi, step, best);
  }
  best.objective = subset_objective(y, f, s, best.b, lambda);
  return best;
}

// Euclidean projection onto the probability simplex (sort-based).
inline Eigen::VectorXd project_simplex(const Eigen::VectorXd& v) {
  std::vector<double> u(v.data(), v.data() + v.size());
  std::sort(u.begin(), u.end(), std::greater<>());
  double cum = 0.0;
  double theta = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    cum += u[i];
    const double t = (cum - 1.0) / static_cast<double>(i + 1);
    if (u[i] - t > 0.0) theta = t;
  }
  return (v.array() - theta).max(0.0).matrix();
}

// Projected gradient descent with step 1/L until the projected-gradient
// step moves less than tol (or max_iter).
inline Eigen::VectorXd projected_gradient(const Eigen::VectorXd& y, const Eigen::MatrixXd& f, const Subset& s,
                                          double lambda, double tol = 1e-12, int max_iter = 2'000'000) {
  const auto n = static_cast<Eigen::Index>(s.size());
  Eigen::MatrixXd fs(y.size(), n);
  for (Eigen::Index i = 0; i < n; ++i) fs.col(i) = f.col(static_cast<Eigen::Index>(s[static_cast<std::size_t>(i)]));
  const double target = 1.0 / static_cast<double>(n);
  const Eigen::MatrixXd H = fs.transpose() * fs + lambda * Eigen::MatrixXd::Identity(n, n);
  const Eigen::VectorXd g = fs.transpose() * y + Eigen::VectorXd::Constant(n, lambda * target);
  const double L = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(H).eigenvalues().maxCoeff();
  Eigen::VectorXd b = Eigen::VectorXd::Constant(n, target);
  for (int it = 0; it < max_iter; ++it) {
    const Eigen::VectorXd next = project_simplex(b - (H * b - g) / L);
    const double moved = (next - b).lpNorm<Eigen::Infinity>();
    b = next;
    if (moved < tol) break;
  }
  return b;
}

struct SubsetResult {
  Subset subset;
  double objective = std::numeric_limits<double>::infinity();
};

// Every c-subset, each solved with the grid-search oracle.
inline SubsetResult brute_force_subsets(const Eigen::VectorXd& y, const Eigen::MatrixXd& f, std::size_t c,
                                        double lambda) {
  const auto M = static_cast<std::size_t>(f.cols());
  SubsetResult best;
  std::vector<bool> pick(M, false);
  std::fill(pick.begin(), pick.begin() + static_cast<std::ptrdiff_t>(c), true);
  do {
    Subset s;
    for (std::size_t j = 0; j < M; ++j)
      if (pick[j]) s.push_back(j);
    const double obj = grid_search_simplex(y, f, s, lambda).objective;
    if (obj < best.objective) {
      best.objective = obj;
      best.subset = s;
    }
  } while (std::prev_permutation(pick.begin(), pick.end()));
  return best;
}

// Hedge distributions recomputed from the closed form in long double:
// pi_t proportional to exp(-sum over k = t-d, t-2d, ... >= 1 of eta_k L_k),
// with B_{k+1} = max(B_k, max loss_k), eta_k from B_k, and L_k the loss of
// round k (hedge) or the mean of the first k losses (fictitious play).
inline std::vector<std::vector<long double>> reference_hedge(const std::vector<std::vector<double>>& losses,
                                                             std::size_t rounds, double b1, int delay,
                                                             bool fictitious) {
  const std::size_t M = losses.empty() ? 1 : losses[0].size();
  const long double logm = std::log(static_cast<long double>(M));
  std::vector<long double> B{static_cast<long double>(b1)};
  for (const auto& l : losses) B.push_back(std::max(B.back(), static_cast<long double>(*std::max_element(l.begin(), l.end()))));
  auto eta = [&](std::size_t k) {
    const long double kk = static_cast<long double>(k);
    return delay == 2 ? (2.0L / B[k - 1]) * std::sqrt(logm / kk) : (1.0L / B[k - 1]) * std::sqrt(2.0L * logm / kk);
  };
  std::vector<std::vector<long double>> out;
  for (std::size_t t = 1; t <= rounds; ++t) {
    std::vector<long double> expo(M, 0.0L);
    for (long k = static_cast<long>(t) - delay; k >= 1; k -= delay) {
      const auto kk = static_cast<std::size_t>(k);
      for (std::size_t c = 0; c < M; ++c) {
        long double L = losses[kk - 1][c];
        if (fictitious) {
          L = 0.0L;
          for (std::size_t tau = 0; tau < kk; ++tau) L += losses[tau][c];
          L /= static_cast<long double>(kk);
        }
        expo[c] -= eta(kk) * L;
      }
    }
    const long double mx = *std::max_element(expo.begin(), expo.end());
    long double sum = 0.0L;
    std::vector<long double> pi(M);
    for (std::size_t c = 0; c < M; ++c) sum += (pi[c] = std::exp(expo[c] - mx));
    for (auto& p : pi) p /= sum;
    out.push_back(pi);
  }
  return out;
}

}  // namespace oracle
