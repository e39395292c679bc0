#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "mixopt/errors.hpp"

namespace mixopt {

struct Domain {
  std::string id;
  std::uint64_t tokens = 0;
};

/// An ordered set of named data domains with token counts. Domains are kept
/// in lexicographic id order so index <-> id mapping is deterministic across
/// runs. Immutable after construction.
class DomainSet {
 public:
  DomainSet() = default;
  DomainSet(std::vector<Domain> domains, std::uint64_t version = 0);

  const std::vector<Domain>& domains() const { return domains_; }
  std::uint64_t version() const { return version_; }
  std::size_t size() const { return domains_.size(); }
  std::uint64_t total_tokens() const { return total_tokens_; }

  const Domain& at(std::size_t i) const { return domains_[i]; }
  /// Index of id in canonical order, or -1 if absent.
  int index_of(const std::string& id) const;
  bool contains(const std::string& id) const { return index_of(id) >= 0; }
  std::vector<std::string> ids() const;

 private:
  std::vector<Domain> domains_;
  std::uint64_t version_ = 0;
  std::uint64_t total_tokens_ = 0;
};

/// Probability vector over a DomainSet, renormalized on construction.
class Mixture {
 public:
  Mixture() = default;
  /// Renormalizes; rejects negative weights, non-finite weights, and an
  /// all-zero vector.
  Mixture(std::uint64_t over_version, std::vector<double> weights);

  std::uint64_t over_version() const { return over_version_; }
  const std::vector<double>& weights() const { return weights_; }
  std::size_t size() const { return weights_.size(); }
  double operator[](std::size_t i) const { return weights_[i]; }

 private:
  std::uint64_t over_version_ = 0;
  std::vector<double> weights_;
};

enum class UpdateKind { Add, Remove, Partition, Revise };

std::string to_string(UpdateKind k);
UpdateKind update_kind_from_string(const std::string& s);

/// One domain-set transformation. `affected` names pre-update domains that
/// the update touches, `introduced` lists post-update domains it creates.
struct DomainUpdate {
  UpdateKind kind = UpdateKind::Add;
  std::vector<std::string> affected;
  std::vector<Domain> introduced;
  /// Partition only: the one split domain mapped to its child ids.
  std::map<std::string, std::vector<std::string>> partition_map;

  /// Checks the per-kind shape invariants; throws Error on violation.
  void validate() const;
};

struct UpdateResult {
  DomainSet set;                         // post-update set, version + 1
  std::vector<std::string> unaffected;   // surviving untouched ids, canonical order
  double partition_slack = 0.0;          // relative token slack for Partition
};

/// Applies an update. Pure: identical inputs give identical outputs,
/// including ordering. Partition token slack above 0.5% is rejected;
/// smaller slack is recorded in the result.
UpdateResult apply_update(const DomainSet& d, const DomainUpdate& u);

/// Mixture proportional to token counts.
Mixture natural_distribution(const DomainSet& d);

/// Repetition budget: a mixture may draw at most k passes over any domain
/// when training on R requested tokens.
struct RepetitionBudget {
  double k = 1.0;
  std::uint64_t requested_tokens = 1;

  RepetitionBudget() = default;
  RepetitionBudget(double k_, std::uint64_t requested)
      : k(k_), requested_tokens(requested) {
    if (!(k >= 1.0)) throw Error(Error::Kind::InvalidArgument, "repetition factor k must be >= 1");
    if (requested_tokens == 0) throw Error(Error::Kind::InvalidArgument, "requested tokens must be > 0");
  }
};

struct CapsResult {
  std::vector<double> caps;  // u_j = min(1, k*N_j/R)
  bool feasible = true;      // sum(caps) >= 1
};

CapsResult repetition_caps(const DomainSet& d, const RepetitionBudget& b);

// --- JSON file formats -----------------------------------------------------
// DomainSet:   {"version": int, "domains": [{"id": str, "tokens": int}, ...]}
// DomainUpdate: {"kind": str, "affected": [...], "introduced": [...],
//                "partition_map": {...}}
// Mixture:     {"over_version": int, "weights": [...]}
// All round-trip byte-stably under the key order above.

std::string domain_set_to_json(const DomainSet& d);
DomainSet domain_set_from_json(const std::string& text);
DomainSet load_domain_set(const std::string& path);
void save_domain_set(const DomainSet& d, const std::string& path);

std::string update_to_json(const DomainUpdate& u);
DomainUpdate update_from_json(const std::string& text);
DomainUpdate load_update(const std::string& path);

std::string mixture_to_json(const Mixture& m, const std::vector<std::string>& ids);
Mixture mixture_from_json(const std::string& text, std::vector<std::string>* ids_out = nullptr);
Mixture load_mixture(const std::string& path, std::vector<std::string>* ids_out = nullptr);
void save_mixture(const Mixture& m, const std::vector<std::string>& ids, const std::string& path);

}  // namespace mixopt
