#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "mixopt/domain.hpp"
#include "mixopt/objective.hpp"
#include "mixopt/optimizer.hpp"

namespace mixopt {

/// Paired (mixture, per-task score) records; the regression training set.
/// Scores are bits-per-byte-like losses (lower is better).
struct SwarmDataset {
  std::uint64_t over_version = 0;
  std::vector<std::string> domain_ids;  // canonical order of the underlying set
  std::vector<std::string> tasks;       // n task ids
  std::vector<Mixture> mixtures;        // K records
  Eigen::MatrixXd scores;               // K x n

  std::size_t runs() const { return mixtures.size(); }
  std::size_t task_count() const { return tasks.size(); }
  /// Checks the structural invariants; throws on violation.
  void validate() const;
};

/// Synthetic ground-truth landscape: per task i,
///   y_i(p) = c_i + exp(a_i . p) + eps_i,  eps_i ~ Normal(0, noise_sd^2).
/// Stands in for proxy-model training.
struct GroundTruthModel {
  std::vector<std::string> domain_ids;  // canonical order
  std::vector<std::string> tasks;
  Eigen::VectorXd offsets;   // c_i > 0
  Eigen::MatrixXd slopes;    // n x m
  double noise_sd = 0.0;

  std::size_t task_count() const { return tasks.size(); }
  std::size_t domain_count() const { return domain_ids.size(); }
  void validate() const;

  /// Noiseless average objective F(p) = (1/n) sum_i (c_i + exp(a_i . p)).
  LogLinearAggregate objective() const;

  /// Restriction of the model to a domain subset, matched by id.
  GroundTruthModel restricted_to(const std::vector<std::string>& ids) const;
};

/// Per-task scores for one mixture. Deterministic given the seed.
std::vector<double> evaluate_truth(const GroundTruthModel& g, const Mixture& p,
                                   std::uint64_t seed);

/// Reference optimum of the noiseless landscape under caps and KL
/// regularization, solved to tight tolerance. Noise is ignored.
struct TruthOptimum {
  Mixture mixture;
  double value = 0.0;
  SolveDiagnostics diag;
};
TruthOptimum truth_optimum(const GroundTruthModel& g, const std::vector<double>& caps,
                           double lambda, const Mixture& anchor);

/// Random landscape generator: c_i ~ U(0.2, 1.0), slopes ~ N(0, 1)/sqrt(m).
GroundTruthModel make_random_truth(const std::vector<std::string>& domain_ids,
                                   const std::vector<std::string>& tasks,
                                   double noise_sd, std::uint64_t seed);

// --- Swarm results CSV -------------------------------------------------------
// Header: mix:<domain_id>,...,task:<task_id>,...  one row per proxy run.
// Mixture columns must cover the domain set exactly; rows whose weights sum
// farther than 1e-6 from 1 are rejected.

SwarmDataset ingest_results(const std::string& path, const DomainSet& over);
void write_results_csv(const SwarmDataset& data, const std::string& path);

// --- Ground-truth JSON -------------------------------------------------------

std::string truth_to_json(const GroundTruthModel& g);
GroundTruthModel truth_from_json(const std::string& text);
GroundTruthModel load_truth(const std::string& path);
void save_truth(const GroundTruthModel& g, const std::string& path);

}  // namespace mixopt
