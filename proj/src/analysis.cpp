#include "mixopt/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "mixopt/rng.hpp"

namespace mixopt {

namespace {

Eigen::VectorXd to_eigen(const Mixture& m) {
  return Eigen::Map<const Eigen::VectorXd>(m.weights().data(), m.size());
}

CouplingReport kappa_from_blocks(const Eigen::MatrixXd& slopes, const std::vector<int>& fix_cols,
                                 const std::vector<int>& comp_cols) {
  const int n = static_cast<int>(slopes.rows());
  CouplingReport rep;
  rep.alpha_fix.resize(n);
  rep.alpha_comp.resize(n);
  rep.per_task.resize(n);
  for (int i = 0; i < n; ++i) {
    double af = 0.0, ac = 0.0;
    for (int c : fix_cols) af += slopes(i, c) * slopes(i, c);
    for (int c : comp_cols) ac += slopes(i, c) * slopes(i, c);
    rep.alpha_fix(i) = std::sqrt(af);
    rep.alpha_comp(i) = std::sqrt(ac);
    rep.per_task(i) = (1.0 + rep.alpha_fix(i) + rep.alpha_comp(i)) * rep.alpha_fix(i);
  }
  rep.kappa = rep.per_task.norm();
  return rep;
}

std::vector<int> resolve_cols(const std::vector<std::string>& ids,
                              const std::vector<std::string>& subset) {
  std::vector<int> cols;
  cols.reserve(subset.size());
  for (const auto& id : subset) {
    const auto it = std::find(ids.begin(), ids.end(), id);
    if (it == ids.end()) {
      throw Error(Error::Kind::UnknownDomain, "id not covered by the models: " + id);
    }
    cols.push_back(static_cast<int>(it - ids.begin()));
  }
  return cols;
}

/// Feasibility in the collapsed space: simplex plus r_v <= min_j kN'_j/(R p1_j)
/// and r_j <= kN'_j/R (Lemma-level constraint set for a given fix-side ratio).
bool in_collapsed_feasible(const Eigen::VectorXd& r, const ReusePlan& plan,
                           const std::vector<double>& p1,
                           const std::optional<RepetitionBudget>& budget) {
  if (!budget) return true;
  const double rt = static_cast<double>(budget->requested_tokens);
  double vcap = 1.0;
  for (std::size_t j = 0; j < plan.d_fix.size(); ++j) {
    if (p1[j] <= 0.0) continue;
    const double nj =
        static_cast<double>(plan.post_update.at(plan.post_update.index_of(plan.d_fix[j])).tokens);
    vcap = std::min(vcap, budget->k * nj / (rt * p1[j]));
  }
  if (r(0) > vcap + 1e-9) return false;
  for (std::size_t j = 0; j < plan.d_comp.size(); ++j) {
    const double nj =
        static_cast<double>(plan.post_update.at(plan.post_update.index_of(plan.d_comp[j])).tokens);
    if (r(1 + static_cast<Eigen::Index>(j)) > std::min(1.0, budget->k * nj / rt) + 1e-9) return false;
  }
  return true;
}

struct CollapsedSolve {
  Eigen::VectorXd r;
  Mixture expanded;
  double value = 0.0;
};

/// Solves the reuse problem on the noiseless truth for an arbitrary fix-side
/// ratio vector p1 (no KL term; theorem audits study the plain objective).
CollapsedSolve solve_collapsed_truth(const GroundTruthModel& truth, const ReusePlan& plan,
                                     const std::vector<double>& p1,
                                     const std::optional<RepetitionBudget>& budget) {
  ReusePlan variant = plan;
  variant.frozen_fix = p1;
  const LogLinearAggregate obj = collapsed_truth_objective(truth, variant);
  SolveSpec spec;
  spec.tol = 1e-10;
  spec.max_iters = 200000;
  if (budget) spec.caps = collapsed_caps(variant, *budget).caps;
  const SolveResult res = solve_exact(obj, spec);
  CollapsedSolve out;
  out.r = res.point;
  CollapsedMixture cm;
  cm.virtual_weight = res.point(0);
  cm.comp_weights.assign(res.point.data() + 1, res.point.data() + res.point.size());
  double total = cm.virtual_weight;
  for (double w : cm.comp_weights) total += w;
  cm.virtual_weight /= total;
  for (double& w : cm.comp_weights) w /= total;
  out.expanded = expand(variant, cm);
  out.value = res.value;
  return out;
}

Mixture solve_full_truth(const GroundTruthModel& truth, const DomainSet& post,
                         const std::optional<RepetitionBudget>& budget) {
  std::vector<double> caps;
  if (budget) {
    const CapsResult cr = repetition_caps(post, *budget);
    if (!cr.feasible) throw Error(Error::Kind::InfeasibleCaps, "repetition caps sum below 1");
    caps = cr.caps;
  }
  const GroundTruthModel aligned = truth.restricted_to(post.ids());
  const TruthOptimum opt = truth_optimum(aligned, caps, 0.0, Mixture());
  return Mixture(post.version(), opt.mixture.weights());
}

std::vector<double> fix_ratios_of(const ReusePlan& plan, const Mixture& full) {
  std::vector<double> out(plan.d_fix.size());
  double total = 0.0;
  for (std::size_t j = 0; j < plan.d_fix.size(); ++j) {
    out[j] = full[plan.post_update.index_of(plan.d_fix[j])];
    total += out[j];
  }
  if (total <= 0.0) {
    // Optimum keeps no mass on the reused side; ratios degenerate to frozen.
    return plan.frozen_fix;
  }
  for (double& w : out) w /= total;
  return out;
}

}  // namespace

CouplingReport coupling_kappa(const Eigen::MatrixXd& slopes, const std::vector<std::string>& ids,
                              const std::vector<std::string>& fix,
                              const std::vector<std::string>& comp) {
  if (static_cast<std::size_t>(slopes.cols()) != ids.size()) {
    throw Error(Error::Kind::DimensionMismatch, "slope matrix does not match id list");
  }
  return kappa_from_blocks(slopes, resolve_cols(ids, fix), resolve_cols(ids, comp));
}

CouplingReport coupling_kappa(const std::vector<TaskModel>& models,
                              const std::vector<std::string>& ids,
                              const std::vector<std::string>& fix,
                              const std::vector<std::string>& comp) {
  if (models.empty()) throw Error(Error::Kind::MissingModel, "no models given");
  Eigen::MatrixXd slopes(static_cast<Eigen::Index>(models.size()),
                         static_cast<Eigen::Index>(ids.size()));
  for (std::size_t i = 0; i < models.size(); ++i) {
    if (models[i].family != Family::LogLinear) {
      throw Error(Error::Kind::WrongFamily, "coupling is defined for log-linear models only");
    }
    if (models[i].A.size() != static_cast<Eigen::Index>(ids.size())) {
      throw Error(Error::Kind::DimensionMismatch, "model slope length does not match id list");
    }
    slopes.row(static_cast<Eigen::Index>(i)) = models[i].A.transpose();
  }
  return coupling_kappa(slopes, ids, fix, comp);
}

CouplingReport coupling_kappa(const GroundTruthModel& truth, const std::vector<std::string>& fix,
                              const std::vector<std::string>& comp) {
  return coupling_kappa(truth.slopes, truth.domain_ids, fix, comp);
}

GapReport gap_report(const GroundTruthModel& truth, const ReusePlan& plan,
                     const Mixture& reuse_result, const Mixture& full_result) {
  plan.validate();
  if (reuse_result.size() != plan.post_update.size() ||
      full_result.size() != plan.post_update.size()) {
    throw Error(Error::Kind::DimensionMismatch, "results must be over the post-update set");
  }
  const GroundTruthModel aligned = truth.restricted_to(plan.post_update.ids());
  const LogLinearAggregate obj = aligned.objective();

  GapReport rep;
  rep.performance_gap = obj.value(to_eigen(reuse_result)) - obj.value(to_eigen(full_result));
  const std::vector<double> qfix = fix_ratios_of(plan, full_result);
  double gap2 = 0.0, rho = 0.0;
  for (std::size_t j = 0; j < plan.d_fix.size(); ++j) {
    const double d = plan.frozen_fix[j] - qfix[j];
    gap2 += d * d;
    rho += full_result[plan.post_update.index_of(plan.d_fix[j])];
  }
  rep.reuse_gap = std::sqrt(gap2);
  rep.rho_star = rho;
  rep.one_minus_rho = 1.0 - rho;
  return rep;
}

double estimate_mu_collapsed(const GroundTruthModel& truth, const ReusePlan& plan,
                             const std::vector<double>& caps, int samples, std::uint64_t seed) {
  const LogLinearAggregate obj = collapsed_truth_objective(truth, plan);
  const int dim = obj.dim();
  Rng rng(seed);
  std::vector<double> alpha(dim, 1.0);
  double mu = std::numeric_limits<double>::infinity();
  Eigen::MatrixXd h(dim, dim);
  for (int s = 0; s < samples; ++s) {
    std::vector<double> draw = rng.dirichlet(alpha);
    Eigen::VectorXd r = Eigen::Map<const Eigen::VectorXd>(draw.data(), dim);
    if (!caps.empty()) {
      r = project_capped_simplex(r, caps);
    }
    obj.hessian(r, h);
    const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(h);
    mu = std::min(mu, eig.eigenvalues().minCoeff());
  }
  return std::max(mu, 1e-8);
}

Theorem1Audit theorem1_constant(const GroundTruthModel& truth, const ReusePlan& plan,
                                const std::optional<RepetitionBudget>& budget,
                                double mu, std::uint64_t seed) {
  plan.validate();
  Theorem1Audit audit;

  std::vector<double> ccaps;
  if (budget) ccaps = collapsed_caps(plan, *budget).caps;
  if (mu > 0.0) {
    audit.mu = mu;
  } else if (mu == 0.0) {
    audit.mu = estimate_mu_collapsed(truth, plan, ccaps, 200, seed);
  } else {
    throw Error(Error::Kind::NonPositiveMu, "strong convexity constant must be positive");
  }

  const Mixture full = solve_full_truth(truth, plan.post_update, budget);
  const CollapsedSolve reuse = solve_collapsed_truth(truth, plan, plan.frozen_fix, budget);
  const std::vector<double> qfix = fix_ratios_of(plan, full);
  const CollapsedSolve at_qfix = solve_collapsed_truth(truth, plan, qfix, budget);

  const GroundTruthModel aligned = truth.restricted_to(plan.post_update.ids());
  const LogLinearAggregate obj = aligned.objective();
  const GapReport gaps = gap_report(truth, plan, reuse.expanded, full);
  audit.reuse_gap = gaps.reuse_gap;
  audit.performance_gap = gaps.performance_gap;
  audit.rho_star = gaps.rho_star;

  const CouplingReport coup = coupling_kappa(aligned, plan.d_fix, plan.d_comp);
  audit.kappa = coup.kappa;
  audit.a_max = coup.alpha_fix.maxCoeff();

  const double fbar_full = obj.value_no_offset(to_eigen(full));
  const double fbar_reuse = obj.value_no_offset(to_eigen(reuse.expanded));
  audit.constant =
      fbar_full * std::exp(audit.a_max * audit.reuse_gap) *
      ((fbar_reuse / audit.mu) * (coup.alpha_fix + coup.alpha_comp).norm() * audit.kappa +
       coup.alpha_fix.norm());
  audit.bound = audit.constant * audit.reuse_gap;
  audit.holds = audit.performance_gap <= audit.bound + 1e-9;

  audit.mutually_feasible = in_collapsed_feasible(reuse.r, plan, qfix, budget) &&
                            in_collapsed_feasible(at_qfix.r, plan, plan.frozen_fix, budget);
  return audit;
}

Theorem2Audit theorem2_bound(const GroundTruthModel& truth, const ReusePlan& plan,
                             UpdateKind update_kind,
                             const std::optional<RepetitionBudget>& budget,
                             double mu1, std::uint64_t seed) {
  plan.validate();
  if (update_kind != UpdateKind::Add) {
    throw Error(Error::Kind::WrongUpdateKind, "the reuse-gap bound covers add updates only");
  }
  Theorem2Audit audit;

  const GroundTruthModel aligned = truth.restricted_to(plan.post_update.ids());
  const Mixture full = solve_full_truth(truth, plan.post_update, budget);
  const std::vector<double> qfix = fix_ratios_of(plan, full);

  double rho = 0.0, gap2 = 0.0;
  for (std::size_t j = 0; j < plan.d_fix.size(); ++j) {
    rho += full[plan.post_update.index_of(plan.d_fix[j])];
    const double diff = plan.frozen_fix[j] - qfix[j];
    gap2 += diff * diff;
  }
  audit.rho_star = rho;
  audit.reuse_gap = std::sqrt(gap2);

  if (mu1 > 0.0) {
    audit.mu1 = mu1;
  } else if (mu1 == 0.0) {
    // Strong convexity in the fix-side ratios at the pre-add point rho = 1:
    // Hessian (1/n) sum_i exp(a_fix,i . p1) a_fix,i a_fix,i^T over sampled p1.
    const int nfix = static_cast<int>(plan.d_fix.size());
    Eigen::MatrixXd afix(aligned.task_count(), nfix);
    for (std::size_t i = 0; i < aligned.task_count(); ++i) {
      for (int j = 0; j < nfix; ++j) {
        afix(static_cast<Eigen::Index>(i), j) =
            aligned.slopes(static_cast<Eigen::Index>(i),
                           plan.post_update.index_of(plan.d_fix[static_cast<std::size_t>(j)]));
      }
    }
    const LogLinearAggregate fix_obj(
        Eigen::VectorXd::Constant(static_cast<Eigen::Index>(aligned.task_count()),
                                  1.0 / static_cast<double>(aligned.task_count())),
        aligned.offsets, afix);
    std::vector<double> p1_caps;
    if (budget) {
      p1_caps.resize(nfix);
      const double rt = static_cast<double>(budget->requested_tokens);
      for (int j = 0; j < nfix; ++j) {
        const double nj = static_cast<double>(
            plan.post_update.at(plan.post_update.index_of(plan.d_fix[static_cast<std::size_t>(j)]))
                .tokens);
        p1_caps[j] = std::min(1.0, budget->k * nj / rt);
      }
      double total = 0.0;
      for (double ccap : p1_caps) total += ccap;
      if (total < 1.0) throw Error(Error::Kind::InfeasibleCaps, "fix-side caps sum below 1");
    }
    Rng rng(seed);
    std::vector<double> alpha(nfix, 1.0);
    double mu = std::numeric_limits<double>::infinity();
    Eigen::MatrixXd h(nfix, nfix);
    for (int s = 0; s < 200; ++s) {
      const std::vector<double> draw = rng.dirichlet(alpha);
      Eigen::VectorXd p1 = Eigen::Map<const Eigen::VectorXd>(draw.data(), nfix);
      if (!p1_caps.empty()) p1 = project_capped_simplex(p1, p1_caps);
      fix_obj.hessian(p1, h);
      const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(h);
      mu = std::min(mu, eig.eigenvalues().minCoeff());
    }
    audit.mu1 = std::max(mu, 1e-8);
  } else {
    throw Error(Error::Kind::NonPositiveMu, "strong convexity constant must be positive");
  }

  const CouplingReport coup = coupling_kappa(aligned, plan.d_fix, plan.d_comp);
  audit.kappa = coup.kappa;
  audit.c_max = (coup.alpha_fix + coup.alpha_comp).maxCoeff();

  const LogLinearAggregate obj = aligned.objective();
  const double fbar = obj.value_no_offset(to_eigen(full));
  audit.bound = (2.0 * fbar * std::exp(audit.c_max * (1.0 - audit.rho_star)) / audit.mu1) *
                audit.kappa * (1.0 - audit.rho_star);
  // Slack covers solver coordinate accuracy (grad tolerance / mu), which
  // dominates the measured gap when the bound is exactly zero.
  audit.holds = audit.reuse_gap <= audit.bound + 1e-6;
  return audit;
}

std::vector<RankedCandidate> rank_recompute_candidates(const Eigen::MatrixXd& slopes,
                                                       const std::vector<std::string>& ids,
                                                       const std::vector<std::string>& unaffected,
                                                       const std::vector<std::string>& affected) {
  const double base = coupling_kappa(slopes, ids, unaffected, affected).kappa;
  std::vector<RankedCandidate> out;
  out.reserve(unaffected.size());
  for (const auto& id : unaffected) {
    std::vector<std::string> fix;
    for (const auto& u : unaffected) {
      if (u != id) fix.push_back(u);
    }
    std::vector<std::string> comp = affected;
    comp.push_back(id);
    const double after = fix.empty() ? 0.0 : coupling_kappa(slopes, ids, fix, comp).kappa;
    out.push_back({id, after, base - after});
  }
  std::sort(out.begin(), out.end(), [](const RankedCandidate& a, const RankedCandidate& b) {
    if (a.delta != b.delta) return a.delta > b.delta;
    return a.id < b.id;
  });
  return out;
}

std::vector<RankedCandidate> rank_recompute_candidates(const GroundTruthModel& truth,
                                                       const std::vector<std::string>& unaffected,
                                                       const std::vector<std::string>& affected) {
  return rank_recompute_candidates(truth.slopes, truth.domain_ids, unaffected, affected);
}

double tv_distance(const Mixture& a, const Mixture& b) {
  if (a.size() != b.size() || a.over_version() != b.over_version()) {
    throw Error(Error::Kind::DimensionMismatch, "tv distance needs mixtures over one domain set");
  }
  double total = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) total += std::abs(a[i] - b[i]);
  return 0.5 * total;
}

double rank_correlation(const std::vector<double>& xs, const std::vector<double>& ys) {
  if (xs.size() != ys.size()) {
    throw Error(Error::Kind::LengthMismatch, "rank correlation needs equal-length inputs");
  }
  if (xs.size() < 2) {
    throw Error(Error::Kind::LengthMismatch, "rank correlation needs at least two points");
  }
  auto ranks = [](const std::vector<double>& v) {
    const std::size_t n = v.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
    std::vector<double> r(n);
    std::size_t i = 0;
    while (i < n) {
      std::size_t j = i;
      while (j + 1 < n && v[order[j + 1]] == v[order[i]]) ++j;
      const double avg = 0.5 * (static_cast<double>(i) + static_cast<double>(j)) + 1.0;
      for (std::size_t k2 = i; k2 <= j; ++k2) r[order[k2]] = avg;
      i = j + 1;
    }
    return r;
  };
  const std::vector<double> rx = ranks(xs);
  const std::vector<double> ry = ranks(ys);
  const std::size_t n = xs.size();
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    mx += rx[i];
    my += ry[i];
  }
  mx /= n;
  my /= n;
  double sx = 0.0, sy = 0.0, cov = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    sx += (rx[i] - mx) * (rx[i] - mx);
    sy += (ry[i] - my) * (ry[i] - my);
    cov += (rx[i] - mx) * (ry[i] - my);
  }
  if (sx <= 0.0 || sy <= 0.0) {
    throw Error(Error::Kind::ZeroVariance, "rank correlation undefined for constant input");
  }
  return cov / std::sqrt(sx * sy);
}

}  // namespace mixopt
