#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "mixopt/optimizer.hpp"
#include "mixopt/rng.hpp"
#include "support/oracles.hpp"

using namespace mixopt;
using Eigen::VectorXd;

namespace {

struct ConstantObjective : Objective {
  int m;
  explicit ConstantObjective(int dim) : m(dim) {}
  int dim() const override { return m; }
  double value(const VectorXd&) const override { return 3.5; }
  double value_grad(const VectorXd&, VectorXd& g) const override {
    g.setZero(m);
    return 3.5;
  }
};

LogLinearAggregate single_task(const VectorXd& a, double c) {
  Eigen::MatrixXd slopes(1, a.size());
  slopes.row(0) = a.transpose();
  VectorXd offsets(1);
  offsets << c;
  VectorXd w(1);
  w << 1.0;
  return LogLinearAggregate(w, offsets, slopes);
}

double tv(const VectorXd& a, const VectorXd& b) {
  return 0.5 * (a - b).cwiseAbs().sum();
}

LogLinearAggregate random_instance(int m, int n, std::uint64_t seed) {
  Rng rng(seed);
  Eigen::MatrixXd slopes(n, m);
  VectorXd offsets(n);
  for (int i = 0; i < n; ++i) {
    offsets(i) = 0.2 + 0.8 * rng.uniform();
    for (int j = 0; j < m; ++j) slopes(i, j) = rng.normal() / std::sqrt(double(m));
  }
  return LogLinearAggregate(VectorXd::Constant(n, 1.0 / n), offsets, slopes);
}

}  // namespace

TEST_CASE("projection leaves feasible interior points unchanged") {
  VectorXd v(3);
  v << 0.2, 0.3, 0.5;
  const VectorXd p = project_capped_simplex(v, {1.0, 1.0, 1.0});
  CHECK((p - v).lpNorm<Eigen::Infinity>() < 1e-10);
}

TEST_CASE("projection handles an active cap") {
  VectorXd v(2);
  v << 10.0, 0.0;
  const VectorXd p = project_capped_simplex(v, {0.6, 1.0});
  CHECK(p(0) == doctest::Approx(0.6).epsilon(1e-10));
  CHECK(p(1) == doctest::Approx(0.4).epsilon(1e-10));
}

TEST_CASE("projection of a symmetric point is symmetric") {
  VectorXd v(2);
  v << 0.5, 0.5;
  const VectorXd p = project_capped_simplex(v, {1.0, 1.0});
  CHECK(p(0) == doctest::Approx(0.5));
  CHECK(p(1) == doctest::Approx(0.5));
}

TEST_CASE("projection is idempotent and matches the active-set oracle") {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    Rng rng(seed);
    const int m = 2 + static_cast<int>(rng.next_u64() % 3);  // 2..4
    VectorXd v(m);
    std::vector<double> caps(m);
    double cap_total = 0.0;
    for (int j = 0; j < m; ++j) {
      v(j) = 4.0 * rng.normal();
      caps[j] = 0.2 + 0.8 * rng.uniform();
      cap_total += caps[j];
    }
    if (cap_total < 1.0) caps[0] += 1.0;  // keep feasible
    const VectorXd p = project_capped_simplex(v, caps);
    const VectorXd q = testsupport::brute_force_projection(v, caps);
    CHECK((p - q).lpNorm<Eigen::Infinity>() < 1e-8);
    const VectorXd pp = project_capped_simplex(p, caps);
    CHECK((p - pp).lpNorm<Eigen::Infinity>() < 1e-10);
    CHECK(std::abs(p.sum() - 1.0) < 1e-9);
  }
}

TEST_CASE("infeasible caps are rejected") {
  VectorXd v(2);
  v << 0.5, 0.5;
  CHECK_THROWS_AS(project_capped_simplex(v, {0.3, 0.3}), Error);
}

TEST_CASE("KL-only objective returns the anchor") {
  ConstantObjective obj(3);
  SolveSpec spec;
  spec.lambda = 0.05;
  spec.anchor = {0.25, 0.25, 0.5};
  const SolveResult res = solve_exact(obj, spec);
  VectorXd anchor(3);
  anchor << 0.25, 0.25, 0.5;
  CHECK(tv(res.point, anchor) < 1e-6);
}

TEST_CASE("single log-linear task pushes all mass away from the positive slope") {
  VectorXd a(2);
  a << 1.0, 0.0;
  const LogLinearAggregate obj = single_task(a, 1.0);
  SolveSpec spec;
  const SolveResult res = solve_exact(obj, spec);
  VectorXd expected(2);
  expected << 0.0, 1.0;
  CHECK(tv(res.point, expected) < 1e-6);

  const VectorXd grid = testsupport::grid_search_simplex(
      2, 0.01, {}, [&](const VectorXd& p) { return obj.value(p); });
  CHECK(tv(res.point, grid) < 0.02);
}

TEST_CASE("an active cap shows up in the diagnostics") {
  VectorXd a(2);
  a << 1.0, 0.0;
  const LogLinearAggregate obj = single_task(a, 1.0);
  SolveSpec spec;
  spec.caps = {1.0, 0.3};
  const SolveResult res = solve_exact(obj, spec);
  CHECK(res.point(1) == doctest::Approx(0.3).epsilon(1e-8));
  CHECK(res.point(0) == doctest::Approx(0.7).epsilon(1e-8));
  REQUIRE(res.diag.active_caps.size() == 1);
  CHECK(res.diag.active_caps[0] == 1);
}

TEST_CASE("exact solver output is feasible") {
  for (std::uint64_t seed = 100; seed < 120; ++seed) {
    const LogLinearAggregate obj = random_instance(3, 4, seed);
    SolveSpec spec;
    spec.caps = {0.8, 0.9, 0.7};
    spec.lambda = 0.05;
    spec.anchor = {0.3, 0.3, 0.4};
    const SolveResult res = solve_exact(obj, spec);
    CHECK(std::abs(res.point.sum() - 1.0) <= 1e-9);
    for (int j = 0; j < 3; ++j) {
      CHECK(res.point(j) >= 0.0);
      CHECK(res.point(j) <= spec.caps[j] + 1e-12);
    }
  }
}

TEST_CASE("search with one candidate returns that candidate when feasible") {
  const LogLinearAggregate obj = random_instance(3, 2, 55);
  SolveSpec spec;
  spec.solver = SolverKind::Search;
  spec.candidates = 1;
  spec.rounds = 1;
  spec.seed = 123;
  spec.anchor = {1.0 / 3, 1.0 / 3, 1.0 / 3};
  const SolveResult res = solve_search(obj, spec);

  // Reproduce the draw the solver must have used.
  Rng rng(substream_seed(spec.seed, 0));
  std::vector<double> alpha(3);
  for (int j = 0; j < 3; ++j) alpha[j] = spec.concentration_first * spec.anchor[j];
  const std::vector<double> draw = rng.dirichlet(alpha);
  for (int j = 0; j < 3; ++j) CHECK(res.point(j) == doctest::Approx(draw[j]).epsilon(1e-15));
}

TEST_CASE("exact dominates search on convex objectives") {
  for (std::uint64_t seed = 200; seed < 210; ++seed) {
    const LogLinearAggregate obj = random_instance(4, 5, seed);
    SolveSpec spec;
    spec.anchor = {0.25, 0.25, 0.25, 0.25};
    for (double lambda : {0.0, 0.05}) {
      spec.lambda = lambda;
      spec.solver = SolverKind::Exact;
      const SolveResult exact = solve_exact(obj, spec);
      spec.solver = SolverKind::Search;
      spec.candidates = 512;
      spec.rounds = 3;
      spec.seed = seed;
      const SolveResult search = solve_search(obj, spec);
      CHECK(exact.value <= search.value + 1e-9);
    }
  }
}

TEST_CASE("search throws when the caps exclude every candidate") {
  const LogLinearAggregate obj = random_instance(2, 2, 77);
  SolveSpec spec;
  spec.solver = SolverKind::Search;
  spec.candidates = 16;
  spec.rounds = 2;
  spec.seed = 9;
  spec.anchor = {0.99, 0.01};
  spec.concentration_first = 2000.0;
  spec.concentration_later = 2000.0;
  spec.caps = {0.5, 1.0};  // the prior mode always violates the first cap
  CHECK_THROWS_AS(solve_search(obj, spec), Error);
}

TEST_CASE("KL pull toward the anchor is monotone in lambda") {
  for (std::uint64_t seed = 300; seed < 305; ++seed) {
    const LogLinearAggregate obj = random_instance(3, 4, seed);
    VectorXd anchor(3);
    anchor << 0.2, 0.3, 0.5;
    SolveSpec spec;
    spec.anchor = {0.2, 0.3, 0.5};
    double prev = std::numeric_limits<double>::infinity();
    for (double lambda : {0.0, 0.01, 0.05, 1.0, 100.0}) {
      spec.lambda = lambda;
      const SolveResult res = solve_exact(obj, spec);
      const double kl = kl_divergence(res.point, anchor);
      if (lambda > 0.0) CHECK(kl <= prev + 1e-7);
      prev = kl;
    }
  }
}

TEST_CASE("zero anchor entries force zero mixture entries when lambda > 0") {
  const LogLinearAggregate obj = random_instance(3, 3, 404);
  SolveSpec spec;
  spec.lambda = 0.05;
  spec.anchor = {0.5, 0.5, 0.0};
  const SolveResult res = solve_exact(obj, spec);
  CHECK(res.point(2) == 0.0);
}

TEST_CASE("exact matches the grid oracle on random capped instances") {
  for (std::uint64_t seed = 500; seed < 520; ++seed) {
    Rng rng(seed);
    const int m = 2 + static_cast<int>(rng.next_u64() % 2);
    const LogLinearAggregate obj = random_instance(m, 3, seed ^ 0xabcd);
    SolveSpec spec;
    std::vector<double> caps(m);
    double total = 0.0;
    for (int j = 0; j < m; ++j) {
      caps[j] = 0.4 + 0.6 * rng.uniform();
      total += caps[j];
    }
    if (total < 1.0) caps[0] = 1.0;
    spec.caps = caps;
    const SolveResult res = solve_exact(obj, spec);
    const VectorXd grid = testsupport::grid_search_simplex(
        m, 0.01, caps, [&](const VectorXd& p) { return obj.value(p); });
    CHECK(tv(res.point, grid) < 0.02);
  }
}
