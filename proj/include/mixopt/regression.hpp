#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "mixopt/objective.hpp"
#include "mixopt/oracle.hpp"

namespace mixopt {

enum class Family { LogLinear, BiMix, AutoScale, GaussianProcess };

std::string to_string(Family f);
Family family_from_string(const std::string& s);

struct FitDiagnostics {
  double residual_norm = 0.0;
  int restarts_used = 0;
  int iterations = 0;
  bool converged = true;
  std::vector<std::string> warnings;
};

/// One fitted surrogate unit. Which fields are meaningful depends on family:
///   LogLinear:       y = c + exp(A . p)
///   BiMix:           y = sum_j A_j * p_j^(-alpha_j)
///   AutoScale:       y = c + sum_j (R * (A_j + p_j))^(-alpha_j)
///   GaussianProcess: posterior mean of an RBF GP (y centered on gp_ymean)
struct TaskModel {
  Family family = Family::LogLinear;
  std::string unit;                 // task id, family name, or "aggregate"
  std::vector<std::string> covers;  // task ids this unit predicts for

  double c = 0.0;
  Eigen::VectorXd A;
  Eigen::VectorXd alpha;
  double token_scale = 0.0;  // AutoScale R

  Eigen::MatrixXd gp_x;      // K x m training inputs
  Eigen::VectorXd gp_coef;   // (K(X,X) + sigma^2 I)^{-1} (y - ymean)
  double gp_lengthscale = 0.0;
  double gp_signal_var = 0.0;
  double gp_noise_var = 0.0;
  double gp_ymean = 0.0;

  FitDiagnostics diag;

  double predict(const Eigen::VectorXd& p) const;
  void predict_grad(const Eigen::VectorXd& p, Eigen::VectorXd& grad) const;
};

/// Granularity at which surrogates are fit: one per task, one per task
/// family, or a single model of the score average.
struct GranularitySpec {
  enum class Mode { PerTask, PerFamily, Aggregated };
  Mode mode = Mode::PerTask;
  std::map<std::string, std::string> task_family;  // PerFamily: task -> family name

  static GranularitySpec per_task() { return {Mode::PerTask, {}}; }
  static GranularitySpec aggregated() { return {Mode::Aggregated, {}}; }
  static GranularitySpec per_family(std::map<std::string, std::string> map) {
    return {Mode::PerFamily, std::move(map)};
  }
};

struct FitConfig {
  int restarts = 8;
  int max_iters = 500;
  double grad_tol = 1e-10;
  std::uint64_t seed = 0;
  double token_scale = 10.0;  // AutoScale R
  // GP hyperparameter grid
  std::vector<double> gp_lengthscales{0.05, 0.1, 0.2, 0.5, 1.0};
  std::vector<double> gp_signal_vars{0.01, 0.1, 1.0};
  std::vector<double> gp_noise_vars{1e-6, 1e-4, 1e-2};
};

/// Nonlinear least squares fits, damped Gauss-Newton with multi-start.
/// All require K >= m + 1 records; non-convergence is reported via the
/// diagnostics flag, never hidden.
TaskModel fit_log_linear(const SwarmDataset& data, std::size_t task_index, const FitConfig& cfg);
TaskModel fit_bimix(const SwarmDataset& data, std::size_t task_index, const FitConfig& cfg);
TaskModel fit_autoscale(const SwarmDataset& data, std::size_t task_index, const FitConfig& cfg);

/// Exact GP regression; hyperparameters grid-maximize the log marginal
/// likelihood. Needs K >= 2.
TaskModel fit_gp(const SwarmDataset& data, std::size_t task_index, const FitConfig& cfg);

/// Fits one surrogate per granularity unit (tasks, families, or the global
/// average) and records which tasks each unit covers.
std::vector<TaskModel> fit_models(const SwarmDataset& data, const GranularitySpec& gran,
                                  Family family, const FitConfig& cfg);

/// Prediction for a specific task under whichever unit covers it.
double predict_for_task(const std::vector<TaskModel>& models, const std::string& task,
                        const Eigen::VectorXd& p);

/// Pearson correlation between predictions and holdout truth, pooled over
/// all (task, holdout mixture) pairs.
double regression_fit_score(const std::vector<TaskModel>& models, const SwarmDataset& holdout);

/// Weighted-average surrogate objective sum_u (|covers_u| / n) * f_u(p) with
/// analytic gradients; exposes a Hessian when every unit is log-linear.
std::unique_ptr<Objective> aggregate_objective(const std::vector<TaskModel>& models,
                                               const std::vector<std::string>& tasks);

std::string models_to_json(const std::vector<TaskModel>& models,
                           const std::vector<std::string>& domain_ids);
std::vector<TaskModel> models_from_json(const std::string& text,
                                        std::vector<std::string>* domain_ids = nullptr);
std::vector<TaskModel> load_models(const std::string& path,
                                   std::vector<std::string>* domain_ids = nullptr);
void save_models(const std::vector<TaskModel>& models,
                 const std::vector<std::string>& domain_ids, const std::string& path);

}  // namespace mixopt
