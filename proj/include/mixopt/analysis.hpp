#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "mixopt/domain.hpp"
#include "mixopt/oracle.hpp"
#include "mixopt/regression.hpp"
#include "mixopt/reuse.hpp"

namespace mixopt {

/// Coupling between reused and recomputed domains:
///   kappa = || (1 + alpha_fix + alpha_comp) o alpha_fix ||
/// where alpha_fix,i and alpha_comp,i are the per-task norms of the slope
/// blocks. Zero exactly when no task has slope mass on the reused side.
struct CouplingReport {
  Eigen::VectorXd alpha_fix;
  Eigen::VectorXd alpha_comp;
  Eigen::VectorXd per_task;  // (1 + af + ac) * af, per task
  double kappa = 0.0;
};

CouplingReport coupling_kappa(const Eigen::MatrixXd& slopes, const std::vector<std::string>& ids,
                              const std::vector<std::string>& fix,
                              const std::vector<std::string>& comp);
CouplingReport coupling_kappa(const std::vector<TaskModel>& models,
                              const std::vector<std::string>& ids,
                              const std::vector<std::string>& fix,
                              const std::vector<std::string>& comp);
CouplingReport coupling_kappa(const GroundTruthModel& truth, const std::vector<std::string>& fix,
                              const std::vector<std::string>& comp);

/// How far reuse landed from full recomputation, all on the noiseless truth.
struct GapReport {
  double reuse_gap = 0.0;        // || p~_fix - q*_fix ||_2
  double performance_gap = 0.0;  // F(reuse) - F(full)
  double rho_star = 0.0;         // total optimal weight on the reused side
  double one_minus_rho = 0.0;
};

GapReport gap_report(const GroundTruthModel& truth, const ReusePlan& plan,
                     const Mixture& reuse_result, const Mixture& full_result);

/// Strong-convexity constant estimate: minimum Hessian eigenvalue of the
/// collapsed truth objective over sampled feasible points, floored at 1e-8.
double estimate_mu_collapsed(const GroundTruthModel& truth, const ReusePlan& plan,
                             const std::vector<double>& caps, int samples, std::uint64_t seed);

/// Performance-gap bound audit. Solves the full and collapsed problems on
/// the noiseless truth (no KL term), evaluates the explicit constant
///   C = Fbar(q*) exp(a_max |Delta|)
///       ((Fbar(q*(p~))/mu) |alpha_fix + alpha_comp| kappa + |alpha_fix|)
/// and checks performance_gap <= C |Delta| + 1e-9.
struct Theorem1Audit {
  double mu = 0.0;
  double kappa = 0.0;
  double a_max = 0.0;
  double reuse_gap = 0.0;
  double performance_gap = 0.0;
  double rho_star = 0.0;
  double constant = 0.0;
  double bound = 0.0;
  bool holds = false;
  bool mutually_feasible = false;
};

Theorem1Audit theorem1_constant(const GroundTruthModel& truth, const ReusePlan& plan,
                                const std::optional<RepetitionBudget>& budget,
                                double mu, std::uint64_t seed);

/// Reuse-gap bound audit for an Add update whose frozen ratios are the
/// pre-update optimum:
///   |p~_fix - q*_fix| <= (2 Fbar(q*) exp(c_max (1-rho*)) / mu1) kappa (1-rho*).
struct Theorem2Audit {
  double mu1 = 0.0;
  double kappa = 0.0;
  double c_max = 0.0;
  double reuse_gap = 0.0;
  double rho_star = 0.0;
  double bound = 0.0;
  bool holds = false;
};

Theorem2Audit theorem2_bound(const GroundTruthModel& truth, const ReusePlan& plan,
                             UpdateKind update_kind,
                             const std::optional<RepetitionBudget>& budget,
                             double mu1, std::uint64_t seed);

/// For each unaffected domain, the coupling that remains after moving it to
/// the recomputed side, sorted by the size of the reduction.
struct RankedCandidate {
  std::string id;
  double kappa_after = 0.0;
  double delta = 0.0;  // kappa(base) - kappa_after
};

std::vector<RankedCandidate> rank_recompute_candidates(const Eigen::MatrixXd& slopes,
                                                       const std::vector<std::string>& ids,
                                                       const std::vector<std::string>& unaffected,
                                                       const std::vector<std::string>& affected);
std::vector<RankedCandidate> rank_recompute_candidates(const GroundTruthModel& truth,
                                                       const std::vector<std::string>& unaffected,
                                                       const std::vector<std::string>& affected);

/// Half L1 distance between mixtures over the same domain set.
double tv_distance(const Mixture& a, const Mixture& b);

/// Spearman rank correlation with average ranks on ties.
double rank_correlation(const std::vector<double>& xs, const std::vector<double>& ys);

}  // namespace mixopt
