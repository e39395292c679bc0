#include "mixopt/reuse.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "mixopt/parallel.hpp"
#include "mixopt/rng.hpp"

namespace mixopt {

void ReusePlan::validate() const {
  if (d_fix.empty()) {
    throw Error(Error::Kind::InvalidArgument,
                "reuse plan needs a nonempty reused side; use full recomputation instead");
  }
  if (frozen_fix.size() != d_fix.size()) {
    throw Error(Error::Kind::DimensionMismatch, "frozen ratios must match the reused domains");
  }
  std::set<std::string> all(d_fix.begin(), d_fix.end());
  for (const auto& id : d_comp) {
    if (!all.insert(id).second) {
      throw Error(Error::Kind::IdCollision, "domain on both reuse sides: " + id);
    }
  }
  if (all.size() != post_update.size()) {
    throw Error(Error::Kind::DimensionMismatch, "reuse plan does not cover the post-update set");
  }
  for (const auto& id : all) {
    if (!post_update.contains(id)) {
      throw Error(Error::Kind::UnknownDomain, "plan id not in post-update set: " + id);
    }
  }
  double total = 0.0;
  for (double w : frozen_fix) {
    if (!(w >= 0.0)) throw Error(Error::Kind::InvalidArgument, "frozen ratios must be nonnegative");
    total += w;
  }
  if (std::abs(total - 1.0) > 1e-9) {
    throw Error(Error::Kind::InvalidArgument, "frozen ratios must sum to 1");
  }
}

void CollapsedMixture::validate() const {
  double total = virtual_weight;
  if (!(virtual_weight >= 0.0)) {
    throw Error(Error::Kind::InvalidArgument, "collapsed weights must be nonnegative");
  }
  for (double w : comp_weights) {
    if (!(w >= 0.0)) throw Error(Error::Kind::InvalidArgument, "collapsed weights must be nonnegative");
    total += w;
  }
  if (std::abs(total - 1.0) > 1e-9) {
    throw Error(Error::Kind::InvalidArgument, "collapsed mixture must sum to 1");
  }
}

ReusePlan make_reuse_plan(const DomainSet& pre_update, const Mixture& previous,
                          const UpdateResult& applied,
                          const std::vector<std::string>& recompute_extra) {
  if (previous.size() != pre_update.size() || previous.over_version() != pre_update.version()) {
    throw Error(Error::Kind::DimensionMismatch, "previous mixture is not over the pre-update set");
  }
  std::set<std::string> unaffected(applied.unaffected.begin(), applied.unaffected.end());
  std::set<std::string> moved;
  for (const auto& id : recompute_extra) {
    if (!unaffected.count(id)) {
      throw Error(Error::Kind::UnknownDomain,
                  "recompute-extra id is not an unaffected domain: " + id);
    }
    moved.insert(id);
  }

  ReusePlan plan;
  plan.post_update = applied.set;
  std::vector<double> frozen;
  for (const auto& dom : applied.set.domains()) {
    if (unaffected.count(dom.id) && !moved.count(dom.id)) {
      plan.d_fix.push_back(dom.id);
      frozen.push_back(previous[pre_update.index_of(dom.id)]);
    } else {
      plan.d_comp.push_back(dom.id);
    }
  }
  double total = 0.0;
  for (double w : frozen) total += w;
  if (!(total > 0.0)) {
    throw Error(Error::Kind::AllMassRemoved, "previous mixture has no mass on the reused domains");
  }
  for (double& w : frozen) w /= total;
  plan.frozen_fix = std::move(frozen);
  plan.validate();
  return plan;
}

Mixture expand(const ReusePlan& plan, const CollapsedMixture& r) {
  plan.validate();
  r.validate();
  if (r.comp_weights.size() != plan.d_comp.size()) {
    throw Error(Error::Kind::DimensionMismatch, "collapsed mixture does not match the plan");
  }
  std::vector<double> q(plan.post_update.size(), 0.0);
  for (std::size_t i = 0; i < plan.d_fix.size(); ++i) {
    q[plan.post_update.index_of(plan.d_fix[i])] = r.virtual_weight * plan.frozen_fix[i];
  }
  for (std::size_t i = 0; i < plan.d_comp.size(); ++i) {
    q[plan.post_update.index_of(plan.d_comp[i])] = r.comp_weights[i];
  }
  return Mixture(plan.post_update.version(), std::move(q));
}

CollapseResult collapse(const ReusePlan& plan, const Mixture& q) {
  plan.validate();
  if (q.size() != plan.post_update.size() || q.over_version() != plan.post_update.version()) {
    throw Error(Error::Kind::DimensionMismatch, "mixture is not over the plan's post-update set");
  }
  CollapseResult out;
  double rho = 0.0;
  for (const auto& id : plan.d_fix) rho += q[plan.post_update.index_of(id)];
  out.collapsed.virtual_weight = rho;
  out.collapsed.comp_weights.reserve(plan.d_comp.size());
  for (const auto& id : plan.d_comp) {
    out.collapsed.comp_weights.push_back(q[plan.post_update.index_of(id)]);
  }
  if (rho > 0.0) {
    double tv = 0.0;
    for (std::size_t i = 0; i < plan.d_fix.size(); ++i) {
      const double qi = q[plan.post_update.index_of(plan.d_fix[i])] / rho;
      tv += std::abs(qi - plan.frozen_fix[i]);
    }
    out.residual = 0.5 * tv;
  }
  return out;
}

CapsResult collapsed_caps(const ReusePlan& plan, const RepetitionBudget& b) {
  plan.validate();
  CapsResult out;
  out.caps.resize(plan.collapsed_dim());
  const double r_tokens = static_cast<double>(b.requested_tokens);

  double vcap = 1.0;
  for (std::size_t i = 0; i < plan.d_fix.size(); ++i) {
    if (plan.frozen_fix[i] <= 0.0) continue;  // draws no tokens
    const double nj = static_cast<double>(
        plan.post_update.at(plan.post_update.index_of(plan.d_fix[i])).tokens);
    vcap = std::min(vcap, b.k * nj / (r_tokens * plan.frozen_fix[i]));
  }
  out.caps[0] = std::min(1.0, vcap);

  double total = out.caps[0];
  for (std::size_t i = 0; i < plan.d_comp.size(); ++i) {
    const double nj = static_cast<double>(
        plan.post_update.at(plan.post_update.index_of(plan.d_comp[i])).tokens);
    out.caps[1 + i] = std::min(1.0, b.k * nj / r_tokens);
    total += out.caps[1 + i];
  }
  out.feasible = total >= 1.0;
  if (!out.feasible) {
    throw Error(Error::Kind::InfeasibleCaps, "collapsed caps sum below 1");
  }
  return out;
}

Mixture renormalize_remove(const Mixture& p, const std::vector<std::string>& ids,
                           const std::vector<std::string>& removed) {
  if (p.size() != ids.size()) {
    throw Error(Error::Kind::DimensionMismatch, "mixture/id length mismatch");
  }
  std::set<std::string> gone(removed.begin(), removed.end());
  std::vector<double> kept;
  double total = 0.0;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (gone.count(ids[i])) continue;
    kept.push_back(p[i]);
    total += p[i];
  }
  if (kept.empty() || total <= 0.0) {
    throw Error(Error::Kind::AllMassRemoved, "remove leaves no surviving mixture mass");
  }
  for (double& w : kept) w /= total;
  return Mixture(p.over_version() + 1, std::move(kept));
}

namespace {

/// Natural distribution in collapsed coordinates: the virtual domain carries
/// the summed reused tokens.
std::vector<double> collapsed_natural(const ReusePlan& plan) {
  std::vector<double> r0(plan.collapsed_dim(), 0.0);
  double total = 0.0;
  for (const auto& id : plan.d_fix) {
    r0[0] += static_cast<double>(plan.post_update.at(plan.post_update.index_of(id)).tokens);
  }
  for (std::size_t i = 0; i < plan.d_comp.size(); ++i) {
    r0[1 + i] =
        static_cast<double>(plan.post_update.at(plan.post_update.index_of(plan.d_comp[i])).tokens);
  }
  for (double v : r0) total += v;
  if (total <= 0.0) {
    throw Error(Error::Kind::EmptyDomainSet, "post-update set has no tokens");
  }
  for (double& v : r0) v /= total;
  return r0;
}

SwarmDataset evaluate_swarm(const std::vector<Mixture>& collapsed_as_full,
                            const std::vector<std::vector<double>>& collapsed_coords,
                            const std::vector<std::string>& tasks, const OracleFn& oracle,
                            std::uint64_t version, std::size_t dim) {
  SwarmDataset data;
  data.over_version = version;
  data.domain_ids.resize(dim);
  // Collapsed coordinates are positional, not named; synthesize stable ids.
  data.domain_ids[0] = "virtual";
  for (std::size_t i = 1; i < dim; ++i) data.domain_ids[i] = "comp" + std::to_string(i);
  data.tasks = tasks;
  data.scores.resize(static_cast<Eigen::Index>(collapsed_as_full.size()),
                     static_cast<Eigen::Index>(tasks.size()));
  std::vector<std::vector<double>> rows(collapsed_as_full.size());
  parallel_for(collapsed_as_full.size(), [&](std::size_t j) {
    rows[j] = oracle(collapsed_as_full[j], j);
  });
  for (std::size_t j = 0; j < rows.size(); ++j) {
    if (rows[j].size() != tasks.size()) {
      throw Error(Error::Kind::DimensionMismatch, "oracle returned wrong score count");
    }
    data.mixtures.emplace_back(version, collapsed_coords[j]);
    for (std::size_t t = 0; t < tasks.size(); ++t) {
      data.scores(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(t)) = rows[j][t];
    }
  }
  return data;
}

}  // namespace

ReuseOutcome full_mix_reuse(const ReusePlan& plan, const ReuseConfig& cfg,
                            const std::vector<std::string>& tasks, const OracleFn& oracle) {
  plan.validate();
  if (tasks.empty()) {
    throw Error(Error::Kind::InvalidArgument, "reuse pipeline needs at least one task");
  }
  const std::size_t dim = plan.collapsed_dim();
  const std::vector<double> r0 = collapsed_natural(plan);

  CapsResult caps;
  caps.caps.assign(dim, 1.0);
  if (cfg.budget) caps = collapsed_caps(plan, *cfg.budget);

  // Sample in collapsed coordinates; the virtual domain is never clipped in
  // sparse mode (clipping it would zero every reused domain).
  SampleRules rules;
  rules.alpha.resize(dim);
  for (std::size_t j = 0; j < dim; ++j) {
    rules.alpha[j] = std::max(static_cast<double>(dim) * r0[j], 1e-3);
  }
  rules.sparsity = cfg.sparsity;
  rules.sparse_threshold = cfg.sparse_threshold;
  rules.sparse_protect = {0};

  const int count = cfg.swarm_count > 0
                        ? cfg.swarm_count
                        : recommended_swarm_size(static_cast<int>(dim), 3);

  ReuseOutcome out;
  std::vector<std::vector<double>> collapsed_coords(count);
  out.swarm.reserve(count);
  for (int j = 0; j < count; ++j) {
    Rng rng(substream_seed(cfg.sampler_seed, static_cast<std::uint64_t>(j)));
    collapsed_coords[j] = sample_mixture_vector(rng, rules);
    CollapsedMixture rj;
    rj.virtual_weight = collapsed_coords[j][0];
    rj.comp_weights.assign(collapsed_coords[j].begin() + 1, collapsed_coords[j].end());
    out.swarm.push_back(expand(plan, rj));
  }

  const SwarmDataset data = evaluate_swarm(out.swarm, collapsed_coords, tasks, oracle,
                                           plan.post_update.version(), dim);

  out.models = fit_models(data, GranularitySpec::per_task(), Family::LogLinear, cfg.fit);
  for (const auto& m : out.models) {
    for (const auto& w : m.diag.warnings) out.warnings.push_back(m.unit + ": " + w);
  }

  const auto objective = aggregate_objective(out.models, tasks);
  SolveSpec spec;
  spec.lambda = cfg.lambda;
  spec.anchor = r0;
  if (cfg.budget) spec.caps = caps.caps;
  spec.tol = cfg.solver_tol;
  spec.max_iters = cfg.solver_max_iters;
  const SolveResult sol = solve_exact(*objective, spec);

  out.collapsed.virtual_weight = sol.point(0);
  out.collapsed.comp_weights.assign(sol.point.data() + 1, sol.point.data() + dim);
  // Guard against projection round-off before re-validating the simplex sum.
  double total = out.collapsed.virtual_weight;
  for (double w : out.collapsed.comp_weights) total += w;
  out.collapsed.virtual_weight /= total;
  for (double& w : out.collapsed.comp_weights) w /= total;

  out.proposed = expand(plan, out.collapsed);
  out.solve_diag = sol.diag;
  out.objective_value = sol.value;
  return out;
}

ReuseOutcome partial_mix_reuse(const ReusePlan& plan, const std::vector<std::string>& unaffected,
                               const ReuseConfig& cfg, const std::vector<std::string>& tasks,
                               const OracleFn& oracle) {
  plan.validate();  // nonempty d_fix; an empty reused side is full recomputation
  std::set<std::string> ok(unaffected.begin(), unaffected.end());
  for (const auto& id : plan.d_fix) {
    if (!ok.count(id)) {
      throw Error(Error::Kind::InvalidArgument,
                  "partial reuse may only keep unaffected domains; '" + id + "' is affected");
    }
  }
  return full_mix_reuse(plan, cfg, tasks, oracle);
}

SwarmReuseOutcome swarm_reuse(const SwarmDataset& old_swarm, const DomainSet& pre_update,
                              const DomainUpdate& update, int fresh_count,
                              const ReuseConfig& cfg, const OracleFn& oracle) {
  old_swarm.validate();
  if (update.kind != UpdateKind::Add && update.kind != UpdateKind::Partition) {
    throw Error(Error::Kind::UnsupportedUpdateKind,
                "old swarms are only representable across add and partition updates");
  }
  if (old_swarm.over_version != pre_update.version() ||
      old_swarm.domain_ids != pre_update.ids()) {
    throw Error(Error::Kind::DimensionMismatch, "old swarm is not over the pre-update set");
  }
  const UpdateResult applied = apply_update(pre_update, update);
  const DomainSet& post = applied.set;

  // Child natural proportions for a partition split.
  std::vector<std::pair<int, double>> child_split;  // (post index, fraction)
  int parent_idx = -1;
  if (update.kind == UpdateKind::Partition) {
    parent_idx = pre_update.index_of(update.affected[0]);
    double child_total = 0.0;
    for (const auto& dom : update.introduced) child_total += static_cast<double>(dom.tokens);
    for (const auto& dom : update.introduced) {
      child_split.emplace_back(post.index_of(dom.id),
                               static_cast<double>(dom.tokens) / child_total);
    }
  }

  SwarmDataset combined;
  combined.over_version = post.version();
  combined.domain_ids = post.ids();
  combined.tasks = old_swarm.tasks;

  std::vector<std::vector<double>> rows;
  std::vector<Mixture> mixes;
  for (std::size_t rix = 0; rix < old_swarm.runs(); ++rix) {
    std::vector<double> w(post.size(), 0.0);
    for (std::size_t j = 0; j < pre_update.size(); ++j) {
      const std::string& id = pre_update.at(j).id;
      if (update.kind == UpdateKind::Partition && static_cast<int>(j) == parent_idx) {
        for (const auto& [ci, frac] : child_split) w[ci] = old_swarm.mixtures[rix][j] * frac;
      } else {
        w[post.index_of(id)] = old_swarm.mixtures[rix][j];
      }
    }
    // Zero padding on added domains violates dense positivity; admitted as-is.
    mixes.emplace_back(post.version(), std::move(w));
    std::vector<double> scores(old_swarm.task_count());
    for (std::size_t t = 0; t < scores.size(); ++t) {
      scores[t] = old_swarm.scores(static_cast<Eigen::Index>(rix), static_cast<Eigen::Index>(t));
    }
    rows.push_back(std::move(scores));
  }
  const std::size_t reused = rows.size();

  // Fresh runs on the post-update set.
  SwarmConfig fresh_cfg;
  fresh_cfg.count = fresh_count;
  fresh_cfg.prior = natural_distribution(post);
  fresh_cfg.sparsity = cfg.sparsity;
  fresh_cfg.sparse_threshold = cfg.sparse_threshold;
  fresh_cfg.seed = cfg.sampler_seed;
  std::vector<Mixture> fresh;
  if (fresh_count > 0) fresh = sample_swarm(post, fresh_cfg);
  std::vector<std::vector<double>> fresh_rows(fresh.size());
  parallel_for(fresh.size(), [&](std::size_t j) { fresh_rows[j] = oracle(fresh[j], reused + j); });
  for (std::size_t j = 0; j < fresh.size(); ++j) {
    mixes.push_back(fresh[j]);
    rows.push_back(fresh_rows[j]);
  }

  combined.mixtures = std::move(mixes);
  combined.scores.resize(static_cast<Eigen::Index>(rows.size()),
                         static_cast<Eigen::Index>(combined.tasks.size()));
  for (std::size_t rix = 0; rix < rows.size(); ++rix) {
    for (std::size_t t = 0; t < combined.tasks.size(); ++t) {
      combined.scores(static_cast<Eigen::Index>(rix), static_cast<Eigen::Index>(t)) = rows[rix][t];
    }
  }
  combined.validate();

  SwarmReuseOutcome out;
  out.reused_runs = reused;
  out.fresh_runs = fresh.size();
  out.combined = combined;
  out.models = fit_models(combined, GranularitySpec::per_task(), Family::LogLinear, cfg.fit);
  const auto objective = aggregate_objective(out.models, combined.tasks);

  SolveSpec spec;
  spec.lambda = cfg.lambda;
  spec.anchor = natural_distribution(post).weights();
  if (cfg.budget) {
    const CapsResult caps = repetition_caps(post, *cfg.budget);
    if (!caps.feasible) throw Error(Error::Kind::InfeasibleCaps, "repetition caps sum below 1");
    spec.caps = caps.caps;
  }
  spec.tol = cfg.solver_tol;
  spec.max_iters = cfg.solver_max_iters;
  const SolveResult sol = solve_exact(*objective, spec);
  out.proposed = Mixture(post.version(),
                         std::vector<double>(sol.point.data(), sol.point.data() + sol.point.size()));
  out.solve_diag = sol.diag;
  out.objective_value = sol.value;
  return out;
}

LogLinearAggregate collapsed_truth_objective(const GroundTruthModel& truth, const ReusePlan& plan) {
  plan.validate();
  truth.validate();
  const GroundTruthModel aligned = truth.restricted_to(plan.post_update.ids());
  const int n = static_cast<int>(aligned.task_count());
  const int dim = static_cast<int>(plan.collapsed_dim());

  Eigen::MatrixXd b(n, dim);
  for (int i = 0; i < n; ++i) {
    double vfix = 0.0;
    for (std::size_t j = 0; j < plan.d_fix.size(); ++j) {
      const int col = plan.post_update.index_of(plan.d_fix[j]);
      vfix += aligned.slopes(i, col) * plan.frozen_fix[j];
    }
    b(i, 0) = vfix;
    for (std::size_t j = 0; j < plan.d_comp.size(); ++j) {
      b(i, 1 + static_cast<int>(j)) = aligned.slopes(i, plan.post_update.index_of(plan.d_comp[j]));
    }
  }
  return LogLinearAggregate(Eigen::VectorXd::Constant(n, 1.0 / n), aligned.offsets, b);
}

}  // namespace mixopt
