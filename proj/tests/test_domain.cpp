#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "mixopt/domain.hpp"

using namespace mixopt;

namespace {

DomainSet abc() {
  return DomainSet({{"a", 100}, {"b", 100}, {"c", 200}});
}

}  // namespace

TEST_CASE("domain set orders ids canonically and rejects duplicates") {
  const DomainSet d({{"zeta", 10}, {"alpha", 20}, {"mid", 5}});
  CHECK(d.at(0).id == "alpha");
  CHECK(d.at(1).id == "mid");
  CHECK(d.at(2).id == "zeta");
  CHECK(d.index_of("mid") == 1);
  CHECK(d.index_of("nope") == -1);
  CHECK_THROWS_AS(DomainSet({{"x", 1}, {"x", 2}}), Error);
  CHECK_THROWS_AS(DomainSet({{"x", 0}, {"y", 0}}), Error);
  CHECK_THROWS_AS(DomainSet({{"", 5}}), Error);
}

TEST_CASE("remove leaves the others") {
  DomainUpdate u;
  u.kind = UpdateKind::Remove;
  u.affected = {"a"};
  const UpdateResult r = apply_update(abc(), u);
  CHECK(r.set.size() == 2);
  CHECK(r.set.index_of("a") == -1);
  CHECK(r.set.at(0).id == "b");
  CHECK(r.set.at(1).id == "c");
  CHECK(r.unaffected == std::vector<std::string>{"b", "c"});
  CHECK(r.set.version() == abc().version() + 1);
}

TEST_CASE("add grows the set and detects collisions") {
  DomainUpdate u;
  u.kind = UpdateKind::Add;
  u.introduced = {{"d", 50}, {"e", 60}};
  const UpdateResult r = apply_update(abc(), u);
  CHECK(r.set.size() == 5);
  CHECK(r.unaffected.size() == 3);

  u.introduced = {{"a", 1}};
  CHECK_THROWS_AS(apply_update(abc(), u), Error);
}

TEST_CASE("unknown affected id is rejected") {
  DomainUpdate u;
  u.kind = UpdateKind::Remove;
  u.affected = {"ghost"};
  try {
    apply_update(abc(), u);
    FAIL("expected UnknownDomain");
  } catch (const Error& e) {
    CHECK(e.kind() == Error::Kind::UnknownDomain);
  }
}

TEST_CASE("exact partition splits one domain") {
  const DomainSet d({{"x", 300}, {"y", 100}});
  DomainUpdate u;
  u.kind = UpdateKind::Partition;
  u.affected = {"x"};
  u.introduced = {{"x1", 150}, {"x2", 150}};
  u.partition_map["x"] = {"x1", "x2"};
  const UpdateResult r = apply_update(d, u);
  CHECK(r.set.size() == 3);
  CHECK(r.unaffected == std::vector<std::string>{"y"});
  CHECK(r.partition_slack == doctest::Approx(0.0));
}

TEST_CASE("partition slack is recorded below the gate and rejected above it") {
  const DomainSet d({{"x", 100000}, {"y", 100}});
  DomainUpdate u;
  u.kind = UpdateKind::Partition;
  u.affected = {"x"};
  u.partition_map["x"] = {"x1", "x2"};

  u.introduced = {{"x1", 49900}, {"x2", 49900}};  // 0.2% slack
  const UpdateResult ok = apply_update(d, u);
  CHECK(ok.partition_slack == doctest::Approx(0.002));

  u.introduced = {{"x1", 49000}, {"x2", 49000}};  // 2% slack
  try {
    apply_update(d, u);
    FAIL("expected PartitionTokenMismatch");
  } catch (const Error& e) {
    CHECK(e.kind() == Error::Kind::PartitionTokenMismatch);
  }
}

TEST_CASE("revise may change the token count under the same or a new id") {
  DomainUpdate u;
  u.kind = UpdateKind::Revise;
  u.affected = {"b"};
  u.introduced = {{"b", 175}};
  const UpdateResult r = apply_update(abc(), u);
  CHECK(r.set.size() == 3);
  CHECK(r.set.at(r.set.index_of("b")).tokens == 175);
  CHECK(r.unaffected == std::vector<std::string>{"a", "c"});
}

TEST_CASE("apply_update is pure") {
  DomainUpdate u;
  u.kind = UpdateKind::Add;
  u.introduced = {{"zz", 7}, {"mm", 9}};
  const UpdateResult r1 = apply_update(abc(), u);
  const UpdateResult r2 = apply_update(abc(), u);
  CHECK(r1.set.ids() == r2.set.ids());
  CHECK(r1.unaffected == r2.unaffected);
}

TEST_CASE("natural distribution is proportional to tokens") {
  const Mixture m = natural_distribution(DomainSet({{"a", 100}, {"b", 300}}));
  CHECK(m[0] == doctest::Approx(0.25));
  CHECK(m[1] == doctest::Approx(0.75));

  const Mixture z = natural_distribution(DomainSet({{"a", 0}, {"b", 10}}));
  CHECK(z[0] == 0.0);
  CHECK(z[1] == 1.0);
}

TEST_CASE("partitioned children split the parent's natural mass by token ratio") {
  const DomainSet d({{"x", 300}, {"y", 100}});
  const Mixture before = natural_distribution(d);
  DomainUpdate u;
  u.kind = UpdateKind::Partition;
  u.affected = {"x"};
  u.introduced = {{"x1", 100}, {"x2", 200}};
  u.partition_map["x"] = {"x1", "x2"};
  const UpdateResult r = apply_update(d, u);
  const Mixture after = natural_distribution(r.set);
  const double parent = before[d.index_of("x")];
  CHECK(after[r.set.index_of("x1")] == doctest::Approx(parent * 100.0 / 300.0).epsilon(1e-12));
  CHECK(after[r.set.index_of("x2")] == doctest::Approx(parent * 200.0 / 300.0).epsilon(1e-12));
  CHECK(after[r.set.index_of("y")] == doctest::Approx(before[d.index_of("y")]).epsilon(1e-12));
}

TEST_CASE("repetition caps clip at one and flag infeasibility") {
  const RepetitionBudget b(4.0, 1000);

  CapsResult r = repetition_caps(DomainSet({{"a", 500}, {"b", 500}}), b);
  CHECK(r.caps == std::vector<double>{1.0, 1.0});
  CHECK(r.feasible);

  r = repetition_caps(DomainSet({{"a", 50}, {"b", 500}}), b);
  CHECK(r.caps[0] == doctest::Approx(0.2));
  CHECK(r.caps[1] == doctest::Approx(1.0));
  CHECK(r.feasible);

  r = repetition_caps(DomainSet({{"a", 10}, {"b", 10}}), b);
  CHECK(r.caps[0] == doctest::Approx(0.04));
  CHECK(r.caps[1] == doctest::Approx(0.04));
  CHECK_FALSE(r.feasible);
}

TEST_CASE("caps are monotone in k and antitone in R") {
  const DomainSet d({{"a", 120}, {"b", 77}, {"c", 333}});
  const CapsResult base = repetition_caps(d, RepetitionBudget(2.0, 1000));
  const CapsResult more_k = repetition_caps(d, RepetitionBudget(3.0, 1000));
  const CapsResult more_r = repetition_caps(d, RepetitionBudget(2.0, 2000));
  for (std::size_t j = 0; j < d.size(); ++j) {
    CHECK(more_k.caps[j] >= base.caps[j]);
    CHECK(more_r.caps[j] <= base.caps[j]);
  }
}

TEST_CASE("budget invariants are enforced") {
  CHECK_THROWS_AS(RepetitionBudget(0.5, 100), Error);
  CHECK_THROWS_AS(RepetitionBudget(2.0, 0), Error);
}

TEST_CASE("domain set json round-trips byte-stably") {
  const DomainSet d({{"web", 1000}, {"code", 340}, {"pdf", 12}});
  const std::string text = domain_set_to_json(d);
  const DomainSet back = domain_set_from_json(text);
  CHECK(domain_set_to_json(back) == text);
  CHECK(back.ids() == d.ids());
  CHECK(back.version() == d.version());
}

TEST_CASE("update json round-trips") {
  DomainUpdate u;
  u.kind = UpdateKind::Partition;
  u.affected = {"x"};
  u.introduced = {{"x1", 5}, {"x2", 7}};
  u.partition_map["x"] = {"x1", "x2"};
  const std::string text = update_to_json(u);
  const DomainUpdate back = update_from_json(text);
  CHECK(update_to_json(back) == text);
  CHECK(back.kind == UpdateKind::Partition);
  CHECK(back.introduced.size() == 2);
}

TEST_CASE("mixture renormalizes and validates") {
  const Mixture m(3, {2.0, 2.0});
  CHECK(m[0] == doctest::Approx(0.5));
  CHECK(m.over_version() == 3);
  CHECK_THROWS_AS(Mixture(0, {1.0, -0.5}), Error);
  CHECK_THROWS_AS(Mixture(0, {0.0, 0.0}), Error);
  double total = 0.0;
  for (std::size_t i = 0; i < m.size(); ++i) total += m[i];
  CHECK(std::abs(total - 1.0) < 1e-9);
}
