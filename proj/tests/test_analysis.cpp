#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "mixopt/analysis.hpp"
#include "mixopt/rng.hpp"

using namespace mixopt;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

GroundTruthModel add_instance(std::uint64_t seed, int m_fix = 4, int m_add = 2, int n = 10) {
  std::vector<std::string> ids;
  for (int j = 0; j < m_fix; ++j) ids.push_back("f" + std::to_string(j));
  for (int j = 0; j < m_add; ++j) ids.push_back("n" + std::to_string(j));
  std::vector<std::string> tasks;
  for (int i = 0; i < n; ++i) tasks.push_back("t" + std::to_string(i));
  return make_random_truth(ids, tasks, 0.0, seed);
}

struct AddSetup {
  DomainSet pre;
  UpdateResult applied;
  ReusePlan plan;  // frozen at the pre-update optimum
};

AddSetup make_add_setup(const GroundTruthModel& g, int m_fix, int m_add,
                        const std::optional<RepetitionBudget>& budget) {
  std::vector<Domain> pre_doms;
  for (int j = 0; j < m_fix; ++j) pre_doms.push_back({"f" + std::to_string(j), 1000});
  AddSetup s{DomainSet(pre_doms), {}, {}};

  std::vector<double> caps;
  if (budget) {
    const CapsResult cr = repetition_caps(s.pre, *budget);
    caps = cr.caps;
  }
  const GroundTruthModel g_pre = g.restricted_to(s.pre.ids());
  const TruthOptimum pre_opt = truth_optimum(g_pre, caps, 0.0, Mixture());

  DomainUpdate u;
  u.kind = UpdateKind::Add;
  for (int j = 0; j < m_add; ++j) u.introduced.push_back({"n" + std::to_string(j), 800});
  s.applied = apply_update(s.pre, u);
  s.plan = make_reuse_plan(s.pre, Mixture(s.pre.version(), pre_opt.mixture.weights()), s.applied);
  return s;
}

}  // namespace

TEST_CASE("kappa is zero when the reused side has no slope mass") {
  MatrixXd slopes(2, 3);
  slopes << 0.0, 0.0, 1.0, 0.0, 0.0, -2.0;
  const CouplingReport rep =
      coupling_kappa(slopes, {"a", "b", "c"}, {"a", "b"}, {"c"});
  CHECK(rep.kappa == 0.0);
}

TEST_CASE("kappa matches the hand-evaluated one-task case") {
  MatrixXd slopes(1, 2);
  slopes << 1.0, 1.0;
  const CouplingReport rep = coupling_kappa(slopes, {"fix", "comp"}, {"fix"}, {"comp"});
  CHECK(rep.alpha_fix(0) == doctest::Approx(1.0));
  CHECK(rep.alpha_comp(0) == doctest::Approx(1.0));
  CHECK(rep.kappa == doctest::Approx(3.0).epsilon(1e-12));
}

TEST_CASE("scaling the reused slopes down strictly decreases kappa") {
  Rng rng(4);
  MatrixXd slopes(3, 4);
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 4; ++j) slopes(i, j) = rng.normal();
  }
  const std::vector<std::string> ids{"a", "b", "c", "d"};
  const double base = coupling_kappa(slopes, ids, {"a", "b"}, {"c", "d"}).kappa;
  REQUIRE(base > 0.0);
  for (double t : {0.8, 0.5, 0.1}) {
    MatrixXd scaled = slopes;
    scaled.col(0) *= t;
    scaled.col(1) *= t;
    CHECK(coupling_kappa(scaled, ids, {"a", "b"}, {"c", "d"}).kappa < base);
  }
}

TEST_CASE("coupling requires log-linear models") {
  TaskModel gp;
  gp.family = Family::GaussianProcess;
  gp.covers = {"t0"};
  try {
    coupling_kappa(std::vector<TaskModel>{gp}, {"a"}, {"a"}, {});
    FAIL("expected WrongFamily");
  } catch (const Error& e) {
    CHECK(e.kind() == Error::Kind::WrongFamily);
  }
}

TEST_CASE("tv distance basics and metric properties") {
  const Mixture a(0, {0.5, 0.5});
  CHECK(tv_distance(a, a) == 0.0);
  CHECK(tv_distance(Mixture(0, {1.0, 0.0}), Mixture(0, {0.0, 1.0})) == 1.0);
  CHECK_THROWS_AS(tv_distance(a, Mixture(0, {1.0, 0.0, 0.0})), Error);

  Rng rng(6);
  for (int trial = 0; trial < 40; ++trial) {
    const Mixture x(0, rng.dirichlet({1, 1, 1}));
    const Mixture y(0, rng.dirichlet({1, 1, 1}));
    const Mixture z(0, rng.dirichlet({1, 1, 1}));
    CHECK(tv_distance(x, y) == doctest::Approx(tv_distance(y, x)));
    CHECK(tv_distance(x, z) <= tv_distance(x, y) + tv_distance(y, z) + 1e-12);
    CHECK(tv_distance(x, y) >= 0.0);
    CHECK(tv_distance(x, y) <= 1.0);
  }
}

TEST_CASE("spearman handles identity, reversal, and ties") {
  const std::vector<double> xs{1, 2, 3, 4, 5};
  CHECK(rank_correlation(xs, xs) == doctest::Approx(1.0));
  CHECK(rank_correlation(xs, {5, 4, 3, 2, 1}) == doctest::Approx(-1.0));
  // ys ranks with one tie: [1, 2.5, 2.5, 4, 5]; Pearson of ranks = sqrt(0.95).
  CHECK(rank_correlation(xs, {1, 2, 2, 4, 5}) ==
        doctest::Approx(std::sqrt(0.95)).epsilon(1e-12));
  CHECK_THROWS_AS(rank_correlation(xs, {1, 2}), Error);
  CHECK_THROWS_AS(rank_correlation({1, 1, 1}, {1, 2, 3}), Error);
}

TEST_CASE("identical results give zero performance gap") {
  const GroundTruthModel g = add_instance(40);
  const AddSetup s = make_add_setup(g, 4, 2, std::nullopt);
  const GroundTruthModel aligned = g.restricted_to(s.applied.set.ids());
  const TruthOptimum full = truth_optimum(aligned, {}, 0.0, Mixture());
  const Mixture fullmix(s.applied.set.version(), full.mixture.weights());
  const GapReport rep = gap_report(g, s.plan, fullmix, fullmix);
  CHECK(rep.performance_gap == doctest::Approx(0.0));
  CHECK(rep.rho_star == doctest::Approx(1.0 - rep.one_minus_rho));
}

TEST_CASE("theorem 1 bound holds on random noiseless instances") {
  int holds = 0;
  const int total = 20;
  for (int i = 0; i < total; ++i) {
    const GroundTruthModel g = add_instance(1000 + i);
    const AddSetup s = make_add_setup(g, 4, 2, std::nullopt);
    const Theorem1Audit audit = theorem1_constant(g, s.plan, std::nullopt, 0.0, 99);
    CHECK(audit.mutually_feasible);
    if (audit.holds) ++holds;
  }
  CHECK(holds == total);
}

TEST_CASE("theorem 1 bound is zero at the optimal frozen ratios") {
  const GroundTruthModel g = add_instance(77);
  AddSetup s = make_add_setup(g, 4, 2, std::nullopt);
  const GroundTruthModel aligned = g.restricted_to(s.applied.set.ids());
  const TruthOptimum full = truth_optimum(aligned, {}, 0.0, Mixture());
  // Refreeze at the post-update optimal ratios.
  double mass = 0.0;
  std::vector<double> qfix;
  for (const auto& id : s.plan.d_fix) {
    qfix.push_back(full.mixture[s.applied.set.index_of(id)]);
    mass += qfix.back();
  }
  for (double& w : qfix) w /= mass;
  s.plan.frozen_fix = qfix;
  const Theorem1Audit audit = theorem1_constant(g, s.plan, std::nullopt, 0.0, 5);
  CHECK(audit.reuse_gap < 1e-5);
  CHECK(audit.bound < 1e-3);
  CHECK(audit.performance_gap <= audit.bound + 1e-9);
}

TEST_CASE("decoupled reused domains give zero constant and zero gap") {
  // Slopes vanish on the reused side: kappa = 0, alpha_fix = 0, so C = 0.
  const int m_fix = 3, m_add = 2, n = 4;
  std::vector<std::string> ids;
  for (int j = 0; j < m_fix; ++j) ids.push_back("f" + std::to_string(j));
  for (int j = 0; j < m_add; ++j) ids.push_back("n" + std::to_string(j));
  GroundTruthModel g = make_random_truth(ids, {"t0", "t1", "t2", "t3"}, 0.0, 321);
  for (int j = 0; j < m_fix; ++j) g.slopes.col(j).setZero();
  (void)n;

  const AddSetup s = make_add_setup(g, m_fix, m_add, std::nullopt);
  const Theorem1Audit audit = theorem1_constant(g, s.plan, std::nullopt, 0.0, 17);
  CHECK(audit.kappa == 0.0);
  CHECK(audit.constant == doctest::Approx(0.0));
  CHECK(audit.performance_gap <= 1e-9);
}

TEST_CASE("theorem 2 bound holds and rejects wrong update kinds") {
  for (int i = 0; i < 20; ++i) {
    const GroundTruthModel g = add_instance(2000 + i);
    const AddSetup s = make_add_setup(g, 4, 2, std::nullopt);
    const Theorem2Audit audit =
        theorem2_bound(g, s.plan, UpdateKind::Add, std::nullopt, 0.0, 7);
    CHECK(audit.holds);
  }
  const GroundTruthModel g = add_instance(1);
  const AddSetup s = make_add_setup(g, 4, 2, std::nullopt);
  try {
    theorem2_bound(g, s.plan, UpdateKind::Remove, std::nullopt, 0.0, 7);
    FAIL("expected WrongUpdateKind");
  } catch (const Error& e) {
    CHECK(e.kind() == Error::Kind::WrongUpdateKind);
  }
}

TEST_CASE("caps that zero out the added domains give rho* = 1 and a tight bound") {
  const GroundTruthModel g = add_instance(55);
  std::vector<Domain> pre_doms;
  for (int j = 0; j < 4; ++j) pre_doms.push_back({"f" + std::to_string(j), 1000000});
  const DomainSet pre(pre_doms);
  const GroundTruthModel g_pre = g.restricted_to(pre.ids());
  const TruthOptimum pre_opt = truth_optimum(g_pre, {}, 0.0, Mixture());

  DomainUpdate u;
  u.kind = UpdateKind::Add;
  u.introduced = {{"n0", 0}, {"n1", 0}};  // no tokens: caps pin them to zero
  const UpdateResult applied = apply_update(pre, u);
  const ReusePlan plan =
      make_reuse_plan(pre, Mixture(pre.version(), pre_opt.mixture.weights()), applied);
  const RepetitionBudget budget(4.0, 1000000);

  const Theorem2Audit audit = theorem2_bound(g, plan, UpdateKind::Add, budget, 0.0, 3);
  CHECK(audit.rho_star == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(audit.bound == doctest::Approx(0.0).epsilon(1e-9));
  CHECK(audit.reuse_gap <= 1e-3);
}

TEST_CASE("non-positive strong convexity constants are rejected") {
  const GroundTruthModel g = add_instance(9);
  const AddSetup s = make_add_setup(g, 4, 2, std::nullopt);
  CHECK_THROWS_AS(theorem1_constant(g, s.plan, std::nullopt, -1.0, 0), Error);
  CHECK_THROWS_AS(theorem2_bound(g, s.plan, UpdateKind::Add, std::nullopt, -0.5, 0), Error);
}

TEST_CASE("a dominant coupler ranks first in the recompute candidates") {
  // One reused domain shares heavy slope mass with the added domains' tasks;
  // the other reused domains barely matter.
  const std::vector<std::string> ids{"fix0", "fix1", "fix2", "new0"};
  MatrixXd slopes = MatrixXd::Zero(3, 4);
  slopes(0, 0) = 2.0;  // fix0 dominates task 0
  slopes(0, 3) = 2.0;  // which the added domain also hits
  slopes(1, 1) = 0.1;
  slopes(2, 2) = 0.1;
  slopes(1, 3) = 0.3;
  const auto ranked =
      rank_recompute_candidates(slopes, ids, {"fix0", "fix1", "fix2"}, {"new0"});
  REQUIRE(ranked.size() == 3);
  CHECK(ranked[0].id == "fix0");
  CHECK(ranked[0].delta >= 2.0 * ranked[1].delta);
}

TEST_CASE("symmetric reused domains tie and zero-slope moves change nothing") {
  const std::vector<std::string> ids{"a", "b", "c", "z"};
  MatrixXd slopes(2, 4);
  slopes << 0.5, 0.5, 0.0, 1.0,
            0.5, 0.5, 0.0, -1.0;
  const auto ranked = rank_recompute_candidates(slopes, ids, {"a", "b", "c"}, {"z"});
  double delta_a = 0.0, delta_b = 0.0, delta_c = 0.0;
  for (const auto& r : ranked) {
    if (r.id == "a") delta_a = r.delta;
    if (r.id == "b") delta_b = r.delta;
    if (r.id == "c") delta_c = r.delta;
  }
  CHECK(std::abs(delta_a - delta_b) < 1e-9);  // symmetric pair
  CHECK(delta_c == doctest::Approx(0.0));     // zero-slope domain
}
