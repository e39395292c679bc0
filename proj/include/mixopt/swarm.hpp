#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "mixopt/domain.hpp"
#include "mixopt/rng.hpp"

namespace mixopt {

enum class Sparsity { Dense, Sparse };

/// Swarm sampling configuration. Dirichlet concentration is the total mass
/// (alpha = concentration * prior); concentration <= 0 means one unit per
/// domain, i.e. concentration = m.
struct SwarmConfig {
  int count = 1;  // K
  Mixture prior;
  double concentration = 0.0;
  Sparsity sparsity = Sparsity::Dense;
  double sparse_threshold = 0.05;       // weights below this are clipped to 0
  std::vector<int> sparse_protect;      // indices never clipped (virtual domains)
  std::optional<RepetitionBudget> constrained;
  std::uint64_t seed = 0;
};

/// Low-level rules for drawing a single mixture vector; shared between
/// sample_swarm and the collapsed-space sampling in the reuse engine.
struct SampleRules {
  std::vector<double> alpha;
  Sparsity sparsity = Sparsity::Dense;
  double sparse_threshold = 0.05;
  std::vector<int> sparse_protect;
  std::vector<double> caps;  // empty = unconstrained
  int max_rejections = 10000;
};

/// One mixture draw under the rules. Dense draws are resampled until every
/// weight is strictly positive; sparse draws clip sub-threshold weights to 0
/// before renormalizing. Cap-violating draws are rejected; throws
/// RejectionExhausted after max_rejections consecutive rejections.
std::vector<double> sample_mixture_vector(Rng& rng, const SampleRules& rules);

/// Draws exactly cfg.count mixtures over d. Deterministic in (d, cfg): draw j
/// depends only on (cfg.seed, j), so callers may parallelize across draws.
std::vector<Mixture> sample_swarm(const DomainSet& d, const SwarmConfig& cfg);

/// Linear swarm-size rule: c * (m + 1) proxy runs for m domains.
int recommended_swarm_size(int m, int c);

/// Swarm manifest file: config + sampled mixtures.
std::string swarm_manifest_to_json(const DomainSet& d, const SwarmConfig& cfg,
                                   const std::vector<Mixture>& swarm);
void save_swarm_manifest(const DomainSet& d, const SwarmConfig& cfg,
                         const std::vector<Mixture>& swarm, const std::string& path);

}  // namespace mixopt
