#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "mixopt/domain.hpp"
#include "mixopt/optimizer.hpp"
#include "mixopt/oracle.hpp"
#include "mixopt/regression.hpp"
#include "mixopt/swarm.hpp"

namespace mixopt {

/// Partition of a post-update domain set into reused domains (ratios frozen
/// from the previous mixture) and recomputed domains.
struct ReusePlan {
  DomainSet post_update;
  std::vector<std::string> d_fix;   // reused, canonical order, nonempty
  std::vector<std::string> d_comp;  // recomputed, canonical order
  std::vector<double> frozen_fix;   // ratios over d_fix, sums to 1

  std::size_t collapsed_dim() const { return 1 + d_comp.size(); }
  void validate() const;
};

/// Collapsed coordinates: index 0 is the virtual domain (total reused
/// weight), the rest follow d_comp order.
struct CollapsedMixture {
  double virtual_weight = 0.0;
  std::vector<double> comp_weights;

  std::size_t size() const { return 1 + comp_weights.size(); }
  void validate() const;
};

/// Builds a plan from the previous mixture and an applied update. Domains in
/// `recompute_extra` (must be unaffected by the update) are moved from the
/// reused side to the recomputed side.
ReusePlan make_reuse_plan(const DomainSet& pre_update, const Mixture& previous,
                          const UpdateResult& applied,
                          const std::vector<std::string>& recompute_extra = {});

/// Expansion: q_j = r_v * frozen_j on d_fix, q_j = r_j on d_comp.
Mixture expand(const ReusePlan& plan, const CollapsedMixture& r);

/// Inverse of expand on the reuse subspace. The residual is the total
/// variation distance between q's normalized fix part and the frozen ratios;
/// zero exactly when q lies in the subspace.
struct CollapseResult {
  CollapsedMixture collapsed;
  double residual = 0.0;
};
CollapseResult collapse(const ReusePlan& plan, const Mixture& q);

/// Repetition caps in collapsed coordinates. The virtual-domain cap is
/// min over reused domains with positive frozen ratio of k N'_j / (R p~_j);
/// zero-ratio domains draw no tokens and impose no cap.
CapsResult collapsed_caps(const ReusePlan& plan, const RepetitionBudget& b);

/// Surviving weights renormalized after a Remove update; consumes no runs.
Mixture renormalize_remove(const Mixture& p, const std::vector<std::string>& ids,
                           const std::vector<std::string>& removed);

/// Scores a full-space mixture on every task; run_index makes oracle noise
/// replayable per record.
using OracleFn = std::function<std::vector<double>(const Mixture&, std::uint64_t run_index)>;

struct ReuseConfig {
  int swarm_count = 0;  // K; 0 = 3 * (collapsed_dim + 1)
  Sparsity sparsity = Sparsity::Dense;
  double sparse_threshold = 0.05;
  std::uint64_t sampler_seed = 0;
  FitConfig fit;
  std::optional<RepetitionBudget> budget;
  double lambda = 0.05;
  double solver_tol = 1e-8;
  int solver_max_iters = 50000;
};

struct ReuseOutcome {
  Mixture proposed;             // expanded, over the post-update set
  CollapsedMixture collapsed;   // solver output in collapsed coordinates
  std::vector<TaskModel> models;  // fitted in collapsed coordinates
  std::vector<Mixture> swarm;     // expanded swarm actually evaluated
  SolveDiagnostics solve_diag;
  double objective_value = 0.0;
  std::vector<std::string> warnings;
};

/// Collapsed-space pipeline: sample K collapsed mixes (virtual domain never
/// sparse-clipped), expand each for oracle evaluation, fit per-task
/// log-linear models in collapsed coordinates, solve under collapsed caps
/// with the KL anchor at the collapsed natural distribution, expand back.
ReuseOutcome full_mix_reuse(const ReusePlan& plan, const ReuseConfig& cfg,
                            const std::vector<std::string>& tasks, const OracleFn& oracle);

/// Same pipeline on a re-partitioned plan; validates that the reused side is
/// a nonempty subset of the update's unaffected domains.
ReuseOutcome partial_mix_reuse(const ReusePlan& plan, const std::vector<std::string>& unaffected,
                               const ReuseConfig& cfg, const std::vector<std::string>& tasks,
                               const OracleFn& oracle);

/// Maps an old swarm onto the post-update set (Add: zero-pad the new
/// domains; Partition: split the parent weight by child token ratios),
/// merges freshly sampled runs, then fits and solves in full dimension.
/// Remove/Revise old swarms are not representable and are rejected.
struct SwarmReuseOutcome {
  Mixture proposed;
  std::vector<TaskModel> models;
  SwarmDataset combined;  // mapped old runs followed by fresh runs
  std::size_t reused_runs = 0;
  std::size_t fresh_runs = 0;
  SolveDiagnostics solve_diag;
  double objective_value = 0.0;
};
SwarmReuseOutcome swarm_reuse(const SwarmDataset& old_swarm, const DomainSet& pre_update,
                              const DomainUpdate& update, int fresh_count,
                              const ReuseConfig& cfg, const OracleFn& oracle);

/// Collapsed-coordinate log-linear truth g_i(r) = c_i + exp(b_i . r) with
/// b_i = [a_fix,i . frozen, a_comp,i]; exact under the log-linear landscape.
LogLinearAggregate collapsed_truth_objective(const GroundTruthModel& truth, const ReusePlan& plan);

}  // namespace mixopt
