#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "mixopt/analysis.hpp"
#include "mixopt/reuse.hpp"
#include "mixopt/rng.hpp"

using namespace mixopt;
using Eigen::VectorXd;

namespace {

// Three reused domains a,b,c plus one added domain z.
ReusePlan paper_plan() {
  ReusePlan plan;
  plan.post_update = DomainSet({{"a", 100}, {"b", 100}, {"c", 200}, {"z", 50}}, 1);
  plan.d_fix = {"a", "b", "c"};
  plan.d_comp = {"z"};
  plan.frozen_fix = {0.25, 0.25, 0.5};
  return plan;
}

OracleFn noiseless_oracle(const GroundTruthModel& g) {
  return [g](const Mixture& q, std::uint64_t run) {
    return evaluate_truth(g, q, substream_seed(0xBEEF, run));
  };
}

}  // namespace

TEST_CASE("expansion reproduces the worked add example") {
  const ReusePlan plan = paper_plan();
  CollapsedMixture r;
  r.virtual_weight = 0.4;
  r.comp_weights = {0.6};
  const Mixture q = expand(plan, r);
  CHECK(q[plan.post_update.index_of("a")] == doctest::Approx(0.1).epsilon(1e-12));
  CHECK(q[plan.post_update.index_of("b")] == doctest::Approx(0.1).epsilon(1e-12));
  CHECK(q[plan.post_update.index_of("c")] == doctest::Approx(0.2).epsilon(1e-12));
  CHECK(q[plan.post_update.index_of("z")] == doctest::Approx(0.6).epsilon(1e-12));
}

TEST_CASE("virtual weight one pads the frozen ratios with zeros") {
  const ReusePlan plan = paper_plan();
  CollapsedMixture r;
  r.virtual_weight = 1.0;
  r.comp_weights = {0.0};
  const Mixture q = expand(plan, r);
  CHECK(q[plan.post_update.index_of("a")] == doctest::Approx(0.25));
  CHECK(q[plan.post_update.index_of("z")] == 0.0);
}

TEST_CASE("collapse inverts the worked example with zero residual") {
  const ReusePlan plan = paper_plan();
  const Mixture q(1, {0.1, 0.1, 0.2, 0.6});
  const CollapseResult res = collapse(plan, q);
  CHECK(res.collapsed.virtual_weight == doctest::Approx(0.4).epsilon(1e-12));
  CHECK(res.collapsed.comp_weights[0] == doctest::Approx(0.6).epsilon(1e-12));
  CHECK(res.residual < 1e-12);
}

TEST_CASE("an off-subspace mixture reports positive residual") {
  const ReusePlan plan = paper_plan();
  const Mixture q(1, {0.25, 0.25, 0.25, 0.25});
  CHECK(collapse(plan, q).residual > 0.0);
}

TEST_CASE("expand then collapse is the identity") {
  const ReusePlan plan = paper_plan();
  Rng rng(5);
  for (int trial = 0; trial < 30; ++trial) {
    const auto draw = rng.dirichlet({1.0, 1.0});
    CollapsedMixture r;
    r.virtual_weight = draw[0];
    r.comp_weights = {draw[1]};
    const CollapseResult back = collapse(plan, expand(plan, r));
    CHECK(std::abs(back.collapsed.virtual_weight - r.virtual_weight) < 1e-12);
    CHECK(std::abs(back.collapsed.comp_weights[0] - r.comp_weights[0]) < 1e-12);
    CHECK(back.residual < 1e-9);
  }
}

TEST_CASE("collapsed caps follow the virtual-domain minimum rule") {
  ReusePlan plan;
  plan.post_update = DomainSet({{"a", 100}, {"b", 100}, {"big", 1000000}}, 1);
  plan.d_fix = {"a", "b"};
  plan.d_comp = {"big"};
  plan.frozen_fix = {0.5, 0.5};
  const CapsResult caps = collapsed_caps(plan, RepetitionBudget(4.0, 1000));
  CHECK(caps.caps[0] == doctest::Approx(0.8).epsilon(1e-12));  // min(4*100/(1000*0.5))
  CHECK(caps.caps[1] == 1.0);                                   // big domain clips
  CHECK(caps.feasible);
}

TEST_CASE("zero frozen ratios impose no virtual cap") {
  ReusePlan plan;
  plan.post_update = DomainSet({{"a", 1000}, {"b", 1}, {"z", 1000000}}, 1);
  plan.d_fix = {"a", "b"};
  plan.d_comp = {"z"};
  plan.frozen_fix = {1.0, 0.0};  // b draws nothing, its tiny size is irrelevant
  const CapsResult caps = collapsed_caps(plan, RepetitionBudget(4.0, 1000));
  CHECK(caps.caps[0] == 1.0);
}

TEST_CASE("expanded caps and collapsed caps describe the same feasible set") {
  ReusePlan plan;
  plan.post_update = DomainSet({{"a", 300}, {"b", 150}, {"y", 400}, {"z", 250}}, 1);
  plan.d_fix = {"a", "b"};
  plan.d_comp = {"y", "z"};
  plan.frozen_fix = {0.6, 0.4};
  const RepetitionBudget budget(2.0, 1500);
  const CapsResult ccaps = collapsed_caps(plan, budget);
  const CapsResult fcaps = repetition_caps(plan.post_update, budget);

  Rng rng(8);
  for (int trial = 0; trial < 200; ++trial) {
    const auto draw = rng.dirichlet({1.0, 1.0, 1.0});
    CollapsedMixture r;
    r.virtual_weight = draw[0];
    r.comp_weights = {draw[1], draw[2]};
    const Mixture q = expand(plan, r);
    bool expanded_ok = true;
    for (std::size_t j = 0; j < q.size(); ++j) {
      if (q[j] > fcaps.caps[j] + 1e-12) expanded_ok = false;
    }
    bool collapsed_ok = r.virtual_weight <= ccaps.caps[0] + 1e-12;
    for (std::size_t j = 0; j < r.comp_weights.size(); ++j) {
      if (r.comp_weights[j] > ccaps.caps[1 + j] + 1e-12) collapsed_ok = false;
    }
    CHECK(expanded_ok == collapsed_ok);
  }
}

TEST_CASE("remove renormalizes the survivors") {
  const Mixture p(0, {0.25, 0.25, 0.5});
  const std::vector<std::string> ids{"a", "b", "c"};

  const Mixture q = renormalize_remove(p, ids, {"a"});
  CHECK(q[0] == doctest::Approx(1.0 / 3).epsilon(1e-9));
  CHECK(q[1] == doctest::Approx(2.0 / 3).epsilon(1e-9));

  const Mixture zero_removed = renormalize_remove(Mixture(0, {0.5, 0.0, 0.5}), ids, {"b"});
  CHECK(zero_removed[0] == doctest::Approx(0.5));
  CHECK(zero_removed[1] == doctest::Approx(0.5));

  const Mixture last = renormalize_remove(p, ids, {"a", "b"});
  CHECK(last[0] == doctest::Approx(1.0));

  try {
    renormalize_remove(Mixture(0, {1.0, 0.0}), {"a", "b"}, {"a"});
    FAIL("expected AllMassRemoved");
  } catch (const Error& e) {
    CHECK(e.kind() == Error::Kind::AllMassRemoved);
  }
}

TEST_CASE("plan construction tracks unaffected domains and moved extras") {
  const DomainSet pre({{"a", 100}, {"b", 100}, {"c", 200}});
  const Mixture prev(0, {0.25, 0.25, 0.5});
  DomainUpdate u;
  u.kind = UpdateKind::Add;
  u.introduced = {{"z", 50}};
  const UpdateResult applied = apply_update(pre, u);

  const ReusePlan full = make_reuse_plan(pre, prev, applied);
  CHECK(full.d_fix == std::vector<std::string>{"a", "b", "c"});
  CHECK(full.d_comp == std::vector<std::string>{"z"});

  const ReusePlan partial = make_reuse_plan(pre, prev, applied, {"c"});
  CHECK(partial.d_fix == std::vector<std::string>{"a", "b"});
  CHECK(partial.d_comp == std::vector<std::string>{"c", "z"});
  CHECK(partial.frozen_fix[0] == doctest::Approx(0.5));  // renormalized over {a,b}

  CHECK_THROWS_AS(make_reuse_plan(pre, prev, applied, {"z"}), Error);
}

TEST_CASE("collapsed fits match the full-space truth on the swarm") {
  const DomainSet pre({{"a", 500}, {"b", 300}, {"c", 200}});
  const Mixture prev(0, {0.5, 0.3, 0.2});
  DomainUpdate u;
  u.kind = UpdateKind::Add;
  u.introduced = {{"y", 100}, {"z", 100}};
  const UpdateResult applied = apply_update(pre, u);
  const ReusePlan plan = make_reuse_plan(pre, prev, applied);

  const GroundTruthModel g =
      make_random_truth(applied.set.ids(), {"t0", "t1", "t2"}, 0.0, 64);
  ReuseConfig cfg;
  cfg.sampler_seed = 100;
  cfg.fit.seed = 100;
  const ReuseOutcome out = full_mix_reuse(plan, cfg, g.tasks, noiseless_oracle(g));

  // The collapsed-space surrogate must agree with the truth at the evaluated
  // points: g_i(r) = f_i(expand(r)) holds exactly for log-linear landscapes.
  for (std::size_t j = 0; j < out.swarm.size(); ++j) {
    const auto truth_scores = evaluate_truth(g, out.swarm[j], 0);
    const CollapseResult cr = collapse(plan, out.swarm[j]);
    VectorXd rvec(plan.collapsed_dim());
    rvec(0) = cr.collapsed.virtual_weight;
    for (std::size_t i = 0; i < cr.collapsed.comp_weights.size(); ++i) {
      rvec(1 + static_cast<Eigen::Index>(i)) = cr.collapsed.comp_weights[i];
    }
    for (std::size_t t = 0; t < g.tasks.size(); ++t) {
      CHECK(std::abs(out.models[t].predict(rvec) - truth_scores[t]) < 1e-6);
    }
  }
}

TEST_CASE("reuse with optimal frozen ratios matches full recomputation") {
  const DomainSet pre({{"a", 500}, {"b", 300}, {"c", 200}});
  DomainUpdate u;
  u.kind = UpdateKind::Add;
  u.introduced = {{"z", 400}};
  UpdateResult applied = apply_update(pre, u);
  const GroundTruthModel g = make_random_truth(applied.set.ids(), {"t0", "t1"}, 0.0, 30);

  // Full recomputation on the post-update set, lambda = 0, no caps.
  const GroundTruthModel aligned = g.restricted_to(applied.set.ids());
  const TruthOptimum full = truth_optimum(aligned, {}, 0.0, Mixture());

  // Freeze the optimal ratios over the unaffected domains.
  std::vector<double> qfix;
  double mass = 0.0;
  for (const auto& id : {"a", "b", "c"}) {
    qfix.push_back(full.mixture[applied.set.index_of(id)]);
    mass += qfix.back();
  }
  for (double& w : qfix) w /= mass;

  ReusePlan plan;
  plan.post_update = applied.set;
  plan.d_fix = {"a", "b", "c"};
  plan.d_comp = {"z"};
  plan.frozen_fix = qfix;

  ReuseConfig cfg;
  cfg.sampler_seed = 7;
  cfg.lambda = 0.0;
  const ReuseOutcome out = full_mix_reuse(plan, cfg, g.tasks, noiseless_oracle(g));
  double tv = 0.0;
  for (std::size_t j = 0; j < out.proposed.size(); ++j) {
    tv += std::abs(out.proposed[j] - full.mixture[j]);
  }
  CHECK(0.5 * tv < 0.02);
}

TEST_CASE("low-utility added domains keep reuse close to full recomputation") {
  const DomainSet pre({{"a", 500}, {"b", 300}, {"c", 200}});
  const GroundTruthModel g_pre = make_random_truth(pre.ids(), {"t0", "t1"}, 0.0, 88);
  const TruthOptimum pre_opt = truth_optimum(g_pre, {}, 0.0, Mixture());

  DomainUpdate u;
  u.kind = UpdateKind::Add;
  u.introduced = {{"y", 100}, {"z", 100}};
  const UpdateResult applied = apply_update(pre, u);

  // Added domains carry zero slope on every task.
  GroundTruthModel g;
  g.domain_ids = applied.set.ids();
  g.tasks = g_pre.tasks;
  g.offsets = g_pre.offsets;
  g.noise_sd = 0.0;
  g.slopes = Eigen::MatrixXd::Zero(2, 5);
  for (std::size_t j = 0; j < pre.size(); ++j) {
    g.slopes.col(applied.set.index_of(pre.at(j).id)) = g_pre.slopes.col(j);
  }

  const ReusePlan plan = make_reuse_plan(pre, pre_opt.mixture.over_version() == pre.version()
                                                  ? pre_opt.mixture
                                                  : Mixture(pre.version(), pre_opt.mixture.weights()),
                                         applied);
  ReuseConfig cfg;
  cfg.sampler_seed = 3;
  cfg.lambda = 0.0;
  const ReuseOutcome out = full_mix_reuse(plan, cfg, g.tasks, noiseless_oracle(g));

  const TruthOptimum full = truth_optimum(g.restricted_to(applied.set.ids()), {}, 0.0, Mixture());
  double tv = 0.0;
  for (std::size_t j = 0; j < out.proposed.size(); ++j) {
    tv += std::abs(out.proposed[j] - full.mixture[j]);
  }
  CHECK(0.5 * tv < 0.05);
}

TEST_CASE("partial reuse validates its domain choices") {
  const DomainSet pre({{"a", 100}, {"b", 100}, {"c", 200}});
  const Mixture prev(0, {0.25, 0.25, 0.5});
  DomainUpdate u;
  u.kind = UpdateKind::Add;
  u.introduced = {{"z", 50}};
  const UpdateResult applied = apply_update(pre, u);
  const GroundTruthModel g = make_random_truth(applied.set.ids(), {"t0"}, 0.0, 11);

  const ReusePlan plan = make_reuse_plan(pre, prev, applied);
  ReuseConfig cfg;
  cfg.sampler_seed = 42;

  // Same plan, same seed: partial entry point with the full unaffected set
  // must match full_mix_reuse exactly.
  const ReuseOutcome a = full_mix_reuse(plan, cfg, g.tasks, noiseless_oracle(g));
  const ReuseOutcome b = partial_mix_reuse(plan, applied.unaffected, cfg, g.tasks, noiseless_oracle(g));
  for (std::size_t j = 0; j < a.proposed.size(); ++j) CHECK(a.proposed[j] == b.proposed[j]);

  // Keeping an affected domain on the reused side is rejected.
  ReusePlan bad = plan;
  bad.d_fix = {"a", "b", "z"};
  bad.d_comp = {"c"};
  bad.frozen_fix = {0.4, 0.4, 0.2};
  CHECK_THROWS_AS(partial_mix_reuse(bad, applied.unaffected, cfg, g.tasks, noiseless_oracle(g)),
                  Error);
}

TEST_CASE("swarm reuse maps add updates by zero-padding") {
  const DomainSet pre({{"a", 100}, {"b", 100}});
  DomainUpdate u;
  u.kind = UpdateKind::Add;
  u.introduced = {{"y", 50}, {"z", 50}};
  const UpdateResult applied = apply_update(pre, u);
  const GroundTruthModel g = make_random_truth(applied.set.ids(), {"t0"}, 0.0, 14);

  SwarmDataset old;
  old.over_version = pre.version();
  old.domain_ids = pre.ids();
  old.tasks = {"t0"};
  old.mixtures = {Mixture(pre.version(), {0.3, 0.7})};
  old.scores.resize(1, 1);
  old.scores(0, 0) =
      evaluate_truth(g, Mixture(applied.set.version(), {0.3, 0.7, 0.0, 0.0}), 0)[0];

  ReuseConfig cfg;
  cfg.sampler_seed = 21;
  const SwarmReuseOutcome out = swarm_reuse(old, pre, u, 8, cfg, noiseless_oracle(g));
  CHECK(out.reused_runs == 1);
  CHECK(out.fresh_runs == 8);
  REQUIRE(out.combined.runs() == 9);
  // First combined row is the zero-padded old mix.
  CHECK(out.combined.mixtures[0][applied.set.index_of("a")] == doctest::Approx(0.3));
  CHECK(out.combined.mixtures[0][applied.set.index_of("y")] == 0.0);
  CHECK(out.combined.mixtures[0][applied.set.index_of("z")] == 0.0);
}

TEST_CASE("swarm reuse splits a partitioned parent by token ratio") {
  const DomainSet pre({{"x", 300}, {"y", 100}});
  DomainUpdate u;
  u.kind = UpdateKind::Partition;
  u.affected = {"x"};
  u.introduced = {{"x1", 150}, {"x2", 150}};
  u.partition_map["x"] = {"x1", "x2"};
  const UpdateResult applied = apply_update(pre, u);
  const GroundTruthModel g = make_random_truth(applied.set.ids(), {"t0"}, 0.0, 15);

  SwarmDataset old;
  old.over_version = pre.version();
  old.domain_ids = pre.ids();
  old.tasks = {"t0"};
  old.mixtures = {Mixture(pre.version(), {0.4, 0.6})};
  old.scores.resize(1, 1);
  old.scores(0, 0) = 1.5;

  ReuseConfig cfg;
  cfg.sampler_seed = 22;
  const SwarmReuseOutcome out = swarm_reuse(old, pre, u, 8, cfg, noiseless_oracle(g));
  CHECK(out.combined.mixtures[0][applied.set.index_of("x1")] == doctest::Approx(0.2));
  CHECK(out.combined.mixtures[0][applied.set.index_of("x2")] == doctest::Approx(0.2));
  CHECK(out.combined.mixtures[0][applied.set.index_of("y")] == doctest::Approx(0.6));
}

TEST_CASE("swarm reuse rejects revise and remove updates") {
  const DomainSet pre({{"a", 100}, {"b", 100}});
  SwarmDataset old;
  old.over_version = pre.version();
  old.domain_ids = pre.ids();
  old.tasks = {"t0"};
  old.mixtures = {Mixture(pre.version(), {0.5, 0.5})};
  old.scores = Eigen::MatrixXd::Constant(1, 1, 1.0);

  DomainUpdate u;
  u.kind = UpdateKind::Revise;
  u.affected = {"a"};
  u.introduced = {{"a", 120}};
  ReuseConfig cfg;
  try {
    swarm_reuse(old, pre, u, 4, cfg, [](const Mixture&, std::uint64_t) {
      return std::vector<double>{1.0};
    });
    FAIL("expected UnsupportedUpdateKind");
  } catch (const Error& e) {
    CHECK(e.kind() == Error::Kind::UnsupportedUpdateKind);
  }
}
