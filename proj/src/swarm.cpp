#include "mixopt/swarm.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "json.hpp"

namespace mixopt {

using ojson = nlohmann::ordered_json;

std::vector<double> sample_mixture_vector(Rng& rng, const SampleRules& rules) {
  const std::size_t m = rules.alpha.size();
  int rejections = 0;
  for (;;) {
    std::vector<double> w = rng.dirichlet(rules.alpha);

    if (rules.sparsity == Sparsity::Sparse) {
      double kept = 0.0;
      for (std::size_t j = 0; j < m; ++j) {
        const bool protected_j =
            std::find(rules.sparse_protect.begin(), rules.sparse_protect.end(),
                      static_cast<int>(j)) != rules.sparse_protect.end();
        if (!protected_j && w[j] < rules.sparse_threshold) w[j] = 0.0;
        kept += w[j];
      }
      if (kept <= 0.0) continue;  // everything clipped; redraw
      for (double& x : w) x /= kept;
    } else {
      bool has_zero = false;
      for (double x : w) {
        if (x <= 0.0) {
          has_zero = true;
          break;
        }
      }
      if (has_zero) continue;  // dense mode conditions the Dirichlet on positivity
    }

    if (!rules.caps.empty()) {
      bool violates = false;
      for (std::size_t j = 0; j < m; ++j) {
        if (w[j] > rules.caps[j] + 1e-12) {
          violates = true;
          break;
        }
      }
      if (violates) {
        if (++rejections >= rules.max_rejections) {
          throw Error(Error::Kind::RejectionExhausted,
                      "constrained sampling rejected " + std::to_string(rejections) +
                          " consecutive draws; caps too tight for the prior");
        }
        continue;
      }
    }
    return w;
  }
}

std::vector<Mixture> sample_swarm(const DomainSet& d, const SwarmConfig& cfg) {
  if (cfg.count < 1) {
    throw Error(Error::Kind::InvalidArgument, "swarm count must be >= 1");
  }
  if (cfg.prior.size() != d.size() || cfg.prior.over_version() != d.version()) {
    throw Error(Error::Kind::DimensionMismatch, "swarm prior is not over the given domain set");
  }
  if (cfg.sparsity == Sparsity::Sparse &&
      !(cfg.sparse_threshold > 0.0 && cfg.sparse_threshold < 0.5)) {
    throw Error(Error::Kind::InvalidArgument, "sparse threshold must lie in (0, 0.5)");
  }

  SampleRules rules;
  const double conc = cfg.concentration > 0.0 ? cfg.concentration
                                              : static_cast<double>(d.size());
  rules.alpha.resize(d.size());
  for (std::size_t j = 0; j < d.size(); ++j) {
    // Floor keeps gamma draws nondegenerate for zero-weight prior entries.
    rules.alpha[j] = std::max(conc * cfg.prior[j], 1e-3);
  }
  rules.sparsity = cfg.sparsity;
  rules.sparse_threshold = cfg.sparse_threshold;
  rules.sparse_protect = cfg.sparse_protect;
  if (cfg.constrained) {
    const CapsResult caps = repetition_caps(d, *cfg.constrained);
    if (!caps.feasible) {
      throw Error(Error::Kind::InfeasibleCaps, "repetition caps sum below 1");
    }
    rules.caps = caps.caps;
  }

  std::vector<Mixture> out;
  out.reserve(cfg.count);
  for (int j = 0; j < cfg.count; ++j) {
    Rng rng(substream_seed(cfg.seed, static_cast<std::uint64_t>(j)));
    out.emplace_back(d.version(), sample_mixture_vector(rng, rules));
  }
  return out;
}

int recommended_swarm_size(int m, int c) {
  if (m < 1 || c < 1) {
    throw Error(Error::Kind::InvalidArgument, "recommended_swarm_size needs m >= 1 and c >= 1");
  }
  return c * (m + 1);
}

std::string swarm_manifest_to_json(const DomainSet& d, const SwarmConfig& cfg,
                                   const std::vector<Mixture>& swarm) {
  ojson j;
  j["domain_version"] = d.version();
  j["ids"] = d.ids();
  ojson c;
  c["count"] = cfg.count;
  c["concentration"] = cfg.concentration;
  c["sparsity"] = cfg.sparsity == Sparsity::Sparse ? "sparse" : "dense";
  c["sparse_threshold"] = cfg.sparse_threshold;
  c["seed"] = cfg.seed;
  c["prior"] = cfg.prior.weights();
  if (cfg.constrained) {
    c["repetition_k"] = cfg.constrained->k;
    c["requested_tokens"] = cfg.constrained->requested_tokens;
  }
  j["config"] = c;
  j["mixtures"] = ojson::array();
  for (const auto& mix : swarm) j["mixtures"].push_back(mix.weights());
  return j.dump(2) + "\n";
}

void save_swarm_manifest(const DomainSet& d, const SwarmConfig& cfg,
                         const std::vector<Mixture>& swarm, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(Error::Kind::Io, "cannot write file: " + path);
  out << swarm_manifest_to_json(d, cfg, swarm);
}

}  // namespace mixopt
