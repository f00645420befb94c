#pragma once

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "heca/error.hpp"
#include "heca/numeric.hpp"
#include "heca/parallel.hpp"
#include "heca/ridge_qp.hpp"

namespace heca {

struct CardinalityProblem {
  Eigen::VectorXd y;
  Eigen::MatrixXd f;
  double lambda = 0.0;
  double epsilon = kMachineEpsilonWeight;
  std::size_t cardinality = 1;
};

struct CardinalitySolution {
  Subset subset;
  Eigen::VectorXd weights;
  double objective = std::numeric_limits<double>::infinity();
  double kkt_residual = 0.0;
  std::size_t nodes_explored = 0;     // branch-and-bound only
  std::size_t subsets_evaluated = 0;  // leaves solved
};

inline nlohmann::json to_json(const CardinalitySolution& s) {
  return {{"subset", s.subset},
          {"weights", std::vector<double>(s.weights.data(), s.weights.data() + s.weights.size())},
          {"objective", s.objective},
          {"kkt_residual", s.kkt_residual},
          {"nodes_explored", s.nodes_explored}};
}

// Whether the shrinkage penalty runs over the support only (default) or over
// all M coordinates, where every zero weight adds (1/||b||_0)^2.
enum class Penalty { support, full_vector };

// Objective at b with shrinkage target 1/||b||_0.
inline double evaluate_objective(const Eigen::VectorXd& b, const RidgeWindow& w, double lambda,
                                 Penalty penalty = Penalty::support) {
  if (static_cast<std::size_t>(b.size()) != w.num_experts()) throw ValidationError("weight vector has wrong length");
  if (!b.allFinite()) throw ValidationError("weights must be finite");
  const auto support = static_cast<double>((b.array() != 0.0).count());
  if (support == 0.0) throw ValidationError("zero weight vector has no support");
  const double target = 1.0 / support;
  double pen = 0.0;
  for (Eigen::Index j = 0; j < b.size(); ++j) {
    if (b[j] != 0.0 || penalty == Penalty::full_vector) pen += (b[j] - target) * (b[j] - target);
  }
  return w.sse(b) + lambda * pen;
}

inline double evaluate_objective(const Eigen::VectorXd& b, const CardinalityProblem& p,
                                 Penalty penalty = Penalty::support) {
  return evaluate_objective(b, RidgeWindow(p.y, p.f), p.lambda, penalty);
}

namespace detail {

inline void check_cardinality(const RidgeWindow& w, std::size_t c, double epsilon) {
  if (c < 1 || c > w.num_experts())
    throw ValidationError("cardinality must lie in 1.." + std::to_string(w.num_experts()));
  if (!std::isfinite(epsilon) || !(epsilon > 0.0)) throw ValidationError("epsilon must be positive");
  if (static_cast<double>(c) * epsilon > 1.0) throw InfeasibleError("infeasible: cardinality times epsilon exceeds 1");
}

// Candidate (obj, subset) beats the incumbent: strictly lower objective, or
// tied within tolerance and lexicographically smaller.
inline bool better(double obj, const Subset& s, double inc_obj, const Subset& inc) {
  if (inc.empty()) return true;
  if (strictly_less(obj, inc_obj)) return true;
  return nearly_equal(obj, inc_obj) && s < inc;
}

// k-subset of {0..n-1} with lexicographic rank `rank`.
inline Subset unrank_combination(std::size_t rank, std::size_t n, std::size_t k) {
  Subset s;
  s.reserve(k);
  std::size_t x = 0;
  for (std::size_t i = 0; i < k; ++i) {
    while (true) {
      const std::size_t count = binomial(n - x - 1, k - i - 1);
      if (rank < count) break;
      rank -= count;
      ++x;
    }
    s.push_back(x++);
  }
  return s;
}

inline CardinalitySolution finalize(const RidgeWindow& w, const Subset& subset, double lambda, double epsilon) {
  const SubsetRidgeSolution s = solve_subset_ridge(w, subset, lambda, epsilon);
  CardinalitySolution out;
  out.subset = subset;
  out.weights = s.weights;
  out.objective = s.objective;
  out.kkt_residual = s.kkt_residual;
  return out;
}

}  // namespace detail

struct ExhaustiveOptions {
  std::size_t max_experts = 25;  // enumeration budget guard
  std::size_t threads = 1;
  std::size_t block_size = 512;  // fixed partition, so results do not depend on threads
};

// Complete subset ridge regressions for a whole ascending lambda path: every
// c-subset is solved once per lambda, warm-started along the path. Ties go to
// the lexicographically smallest subset. Returned weights come from a cold
// re-solve of each winning subset.
inline std::vector<CardinalitySolution> solve_exhaustive_path(const RidgeWindow& w, std::size_t c,
                                                              const std::vector<double>& lambdas, double epsilon,
                                                              const ExhaustiveOptions& opt = {}) {
  detail::check_cardinality(w, c, epsilon);
  if (lambdas.empty()) throw ValidationError("empty lambda path");
  const std::size_t M = w.num_experts();
  if (M > opt.max_experts)
    throw ResourceError("exhaustive enumeration over " + std::to_string(M) + " experts exceeds the budget of " +
                        std::to_string(opt.max_experts) + "; use the branch-bound backend");

  const std::size_t total = binomial(M, c);
  const std::size_t nblocks = (total + opt.block_size - 1) / opt.block_size;
  const std::size_t L = lambdas.size();
  struct Best {
    std::vector<double> obj;
    std::vector<Subset> subset;
  };
  std::vector<Best> blocks(nblocks);

  parallel_for(
      nblocks,
      [&](std::size_t blk) {
        Best best{std::vector<double>(L, std::numeric_limits<double>::infinity()), std::vector<Subset>(L)};
        const std::size_t begin = blk * opt.block_size;
        const std::size_t end = std::min(total, begin + opt.block_size);
        Subset s = detail::unrank_combination(begin, M, c);
        for (std::size_t rank = begin; rank < end; ++rank) {
          Eigen::VectorXd warm;
          for (std::size_t l = 0; l < L; ++l) {
            const SubsetRidgeSolution sol = solve_subset_ridge(w, s, lambdas[l], epsilon, l ? &warm : nullptr);
            warm = sol.weights;
            if (best.subset[l].empty() || strictly_less(sol.objective, best.obj[l])) {
              best.obj[l] = sol.objective;
              best.subset[l] = s;
            }
          }
          next_combination(s, M);
        }
        blocks[blk] = std::move(best);
      },
      opt.threads);

  std::vector<CardinalitySolution> out(L);
  for (std::size_t l = 0; l < L; ++l) {
    double obj = std::numeric_limits<double>::infinity();
    Subset subset;
    for (const auto& b : blocks)
      if (subset.empty() || strictly_less(b.obj[l], obj)) {
        obj = b.obj[l];
        subset = b.subset[l];
      }
    out[l] = detail::finalize(w, subset, lambdas[l], epsilon);
    out[l].subsets_evaluated = total;
  }
  return out;
}

inline CardinalitySolution solve_exhaustive(const RidgeWindow& w, std::size_t c, double lambda, double epsilon,
                                            const ExhaustiveOptions& opt = {}) {
  return solve_exhaustive_path(w, c, {lambda}, epsilon, opt).front();
}

inline CardinalitySolution solve_exhaustive(const CardinalityProblem& p, const ExhaustiveOptions& opt = {}) {
  return solve_exhaustive(RidgeWindow(p.y, p.f), p.cardinality, p.lambda, p.epsilon, opt);
}

// One processed branch-and-bound node, recorded when tracing is enabled.
struct BranchBoundNode {
  std::size_t id = 0;
  std::ptrdiff_t parent = -1;
  Subset forced_in;
  Subset excluded;
  bool leaf = false;
  bool pruned = false;
  double bound = 0.0;  // relaxation bound, or the leaf objective at leaves
  Subset leaf_subset;
};

inline nlohmann::json to_json(const std::vector<BranchBoundNode>& tree) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& n : tree)
    arr.push_back({{"id", n.id},
                   {"parent", n.parent},
                   {"forced_in", n.forced_in},
                   {"excluded", n.excluded},
                   {"leaf", n.leaf},
                   {"pruned", n.pruned},
                   {"bound", n.bound},
                   {"leaf_subset", n.leaf_subset}});
  return arr;
}

struct BranchBoundOptions {
  bool prune = true;                            // false expands the whole tree
  std::vector<BranchBoundNode>* trace = nullptr;  // optional node log
  std::size_t max_nodes = 50'000'000;
};

// Lower bound for every leaf below a node whose candidate experts are
// `candidates` (forced-in plus undecided): the shrinkage problem with target
// 1/c over all candidates with lower bound 0, less the lambda/c^2 that each
// of the |candidates| - c experts left out of a leaf contributes.
inline double relaxation_bound(const RidgeWindow& w, const Subset& candidates, std::size_t c, double lambda,
                               Eigen::VectorXd* relaxed = nullptr) {
  const double target = 1.0 / static_cast<double>(c);
  const auto qp = detail::solve_simplex_qp(w, candidates, lambda, target, 0.0);
  double pen = 0.0;
  for (Eigen::Index i = 0; i < qp.b.size(); ++i) pen += (qp.b[i] - target) * (qp.b[i] - target);
  const double extra = static_cast<double>(candidates.size() - c) * target * target;
  if (relaxed) *relaxed = qp.b;
  return w.sse(candidates, qp.b) + lambda * (pen - extra);
}

// Depth-first branch and bound over expert inclusion. Each node's bound is
// relaxation_bound on forced-in plus undecided experts; the search branches
// on the undecided expert with the largest relaxed weight, forced-in child
// first. Nodes are pruned only when their bound exceeds the incumbent beyond
// the tie tolerance, so lexicographic ties resolve as in solve_exhaustive.
inline CardinalitySolution solve_branch_bound(const RidgeWindow& w, std::size_t c, double lambda, double epsilon,
                                              const BranchBoundOptions& opt = {}) {
  detail::check_cardinality(w, c, epsilon);
  if (!std::isfinite(lambda) || lambda < 0.0) throw ValidationError("lambda must be finite and non-negative");
  const std::size_t M = w.num_experts();

  struct Node {
    Subset forced;
    Subset undecided;
    Subset excluded;
    std::ptrdiff_t parent;
  };
  std::vector<Node> stack;
  stack.push_back({{}, first_combination(M), {}, -1});

  double inc_obj = std::numeric_limits<double>::infinity();
  Subset incumbent;
  std::size_t nodes = 0;
  std::size_t leaves = 0;

  while (!stack.empty()) {
    Node node = std::move(stack.back());
    stack.pop_back();
    if (++nodes > opt.max_nodes) throw ResourceError("branch-and-bound node limit exceeded");
    const std::size_t id = nodes - 1;

    Subset candidates;
    std::merge(node.forced.begin(), node.forced.end(), node.undecided.begin(), node.undecided.end(),
               std::back_inserter(candidates));

    BranchBoundNode rec;
    if (opt.trace) {
      rec.id = id;
      rec.parent = node.parent;
      rec.forced_in = node.forced;
      rec.excluded = node.excluded;
    }

    if (node.forced.size() == c || candidates.size() == c) {
      const Subset& leaf = node.forced.size() == c ? node.forced : candidates;
      const double obj = solve_subset_ridge(w, leaf, lambda, epsilon).objective;
      ++leaves;
      if (detail::better(obj, leaf, inc_obj, incumbent)) {
        inc_obj = obj;
        incumbent = leaf;
      }
      if (opt.trace) {
        rec.leaf = true;
        rec.bound = obj;
        rec.leaf_subset = leaf;
        opt.trace->push_back(std::move(rec));
      }
      continue;
    }

    Eigen::VectorXd relaxed;
    const double bound = relaxation_bound(w, candidates, c, lambda, &relaxed);
    const bool prune = opt.prune && !incumbent.empty() && bound > inc_obj && !nearly_equal(bound, inc_obj, 1e-10);
    if (opt.trace) {
      rec.bound = bound;
      rec.pruned = prune;
      opt.trace->push_back(rec);
    }
    if (prune) continue;

    // Branch on the undecided expert carrying the most relaxed weight.
    std::size_t pick = node.undecided.front();
    double pick_weight = -1.0;
    for (std::size_t i = 0; i < candidates.size(); ++i) {
      const std::size_t j = candidates[i];
      if (!std::binary_search(node.undecided.begin(), node.undecided.end(), j)) continue;
      const double wj = relaxed[static_cast<Eigen::Index>(i)];
      if (wj > pick_weight) {
        pick_weight = wj;
        pick = j;
      }
    }
    Subset rest;
    for (std::size_t j : node.undecided)
      if (j != pick) rest.push_back(j);

    Node out{node.forced, rest, node.excluded, static_cast<std::ptrdiff_t>(id)};
    out.excluded.insert(std::upper_bound(out.excluded.begin(), out.excluded.end(), pick), pick);
    Node in{node.forced, rest, node.excluded, static_cast<std::ptrdiff_t>(id)};
    in.forced.insert(std::upper_bound(in.forced.begin(), in.forced.end(), pick), pick);
    if (out.forced.size() + out.undecided.size() >= c) stack.push_back(std::move(out));
    stack.push_back(std::move(in));
  }

  CardinalitySolution sol = detail::finalize(w, incumbent, lambda, epsilon);
  sol.nodes_explored = nodes;
  sol.subsets_evaluated = leaves;
  return sol;
}

inline CardinalitySolution solve_branch_bound(const CardinalityProblem& p, const BranchBoundOptions& opt = {}) {
  return solve_branch_bound(RidgeWindow(p.y, p.f), p.cardinality, p.lambda, p.epsilon, opt);
}

enum class Backend { exhaustive, branch_bound };

inline std::string to_string(Backend b) { return b == Backend::exhaustive ? "exhaustive" : "branch-bound"; }

inline Backend parse_backend(const std::string& s) {
  if (s == "exhaustive") return Backend::exhaustive;
  if (s == "branch-bound" || s == "branch_bound" || s == "bb") return Backend::branch_bound;
  throw ValidationError("unknown backend '" + s + "' (expected exhaustive or branch-bound)");
}

inline CardinalitySolution solve_cardinality(const RidgeWindow& w, std::size_t c, double lambda, double epsilon,
                                             Backend backend) {
  return backend == Backend::exhaustive ? solve_exhaustive(w, c, lambda, epsilon)
                                        : solve_branch_bound(w, c, lambda, epsilon);
}

// Minimizer over all cardinalities: solve each c and keep the lowest
// objective under `penalty` (ties -> smallest c).
struct L0PartitionSolution {
  std::size_t cardinality = 0;
  CardinalitySolution solution;
  double objective = 0.0;
  std::vector<double> objective_by_cardinality;
};

inline L0PartitionSolution solve_l0_partition(const RidgeWindow& w, double lambda, double epsilon,
                                              Backend backend = Backend::branch_bound,
                                              Penalty penalty = Penalty::support) {
  L0PartitionSolution out;
  for (std::size_t c = 1; c <= w.num_experts(); ++c) {
    if (static_cast<double>(c) * epsilon > 1.0) break;
    CardinalitySolution s = solve_cardinality(w, c, lambda, epsilon, backend);
    const double obj = evaluate_objective(s.weights, w, lambda, penalty);
    out.objective_by_cardinality.push_back(obj);
    if (out.cardinality == 0 || strictly_less(obj, out.objective)) {
      out.cardinality = c;
      out.objective = obj;
      out.solution = std::move(s);
    }
  }
  return out;
}

}  // namespace heca
