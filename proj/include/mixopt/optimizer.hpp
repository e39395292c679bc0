#pragma once

#include <cstdint>
#include <vector>

#include <Eigen/Dense>

#include "mixopt/errors.hpp"
#include "mixopt/objective.hpp"

namespace mixopt {

enum class SolverKind { Exact, Search };

/// Mixture optimization problem description: minimize
///   f(p) + lambda * KL(p || anchor)   over  {p in simplex, p <= caps}.
struct SolveSpec {
  double lambda = 0.0;
  std::vector<double> anchor;  // KL anchor p0; required when lambda > 0
  std::vector<double> caps;    // per-coordinate upper bounds; empty = none
  SolverKind solver = SolverKind::Exact;

  // exact solver
  double tol = 1e-8;
  int max_iters = 50000;

  // search solver
  int candidates = 512;
  int rounds = 3;
  std::uint64_t seed = 0;
  double concentration_first = 50.0;
  double concentration_later = 200.0;
};

struct SolveDiagnostics {
  int iterations = 0;
  double projected_grad_norm = 0.0;
  bool converged = true;
  bool stalled = false;
  std::vector<int> active_caps;  // coordinates sitting on their cap
  int feasible_candidates = 0;   // search only
};

struct SolveResult {
  Eigen::VectorXd point;
  double value = 0.0;  // full objective incl. KL term
  SolveDiagnostics diag;
};

/// Euclidean projection onto {p : sum p = 1, 0 <= p <= caps} by bisection on
/// the shift parameter of p_j = clamp(v_j - tau, 0, cap_j). Requires
/// sum(caps) >= 1. KKT residual below 1e-10.
Eigen::VectorXd project_capped_simplex(const Eigen::VectorXd& v,
                                       const std::vector<double>& caps);

/// Projected gradient descent with Armijo backtracking. Returns a point
/// satisfying all constraints exactly. Convention 0*log(0/x) = 0 for the KL
/// term; anchor entries equal to zero force the corresponding coordinate to
/// zero when lambda > 0.
SolveResult solve_exact(const Objective& objective, const SolveSpec& spec);

/// Multi-round Dirichlet search: candidates violating caps are discarded
/// before scoring, the best feasible candidate seeds the next round's prior.
/// Ties break toward the lowest candidate index.
SolveResult solve_search(const Objective& objective, const SolveSpec& spec);

/// Dispatch on spec.solver.
SolveResult solve(const Objective& objective, const SolveSpec& spec);

/// KL(p || q) with the 0*log(0/x) = 0 convention; +inf if p puts mass where
/// q has none.
double kl_divergence(const Eigen::VectorXd& p, const Eigen::VectorXd& q);

}  // namespace mixopt
