#include "mixopt/regression.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include "json.hpp"
#include "mixopt/parallel.hpp"
#include "mixopt/rng.hpp"

namespace mixopt {

using ojson = nlohmann::ordered_json;

namespace {

constexpr double kExpClamp = 300.0;   // keeps squared residuals finite
constexpr double kBiMixFloor = 1e-6;  // zero weights diverge under negative powers

double safe_exp(double x) { return std::exp(std::clamp(x, -kExpClamp, kExpClamp)); }

// --- damped Gauss-Newton core ------------------------------------------------

struct LsqEval {
  Eigen::VectorXd residual;
  Eigen::MatrixXd jacobian;
};

struct LsqOutcome {
  Eigen::VectorXd theta;
  double residual_norm = std::numeric_limits<double>::infinity();
  int iterations = 0;
  bool converged = false;
};

template <typename EvalFn>
LsqOutcome gauss_newton(EvalFn&& eval, Eigen::VectorXd theta, int max_iters, double grad_tol) {
  LsqOutcome out;
  LsqEval e;
  eval(theta, e);
  double cost = 0.5 * e.residual.squaredNorm();
  double damping = 1e-3;

  int it = 0;
  for (; it < max_iters; ++it) {
    const Eigen::VectorXd grad = e.jacobian.transpose() * e.residual;
    if (grad.lpNorm<Eigen::Infinity>() < grad_tol) {
      out.converged = true;
      break;
    }
    const Eigen::MatrixXd jtj = e.jacobian.transpose() * e.jacobian;
    bool accepted = false;
    for (int attempt = 0; attempt < 30; ++attempt) {
      Eigen::MatrixXd lhs = jtj;
      lhs.diagonal().array() += damping;
      const Eigen::VectorXd delta = lhs.ldlt().solve(-grad);
      if (!delta.allFinite()) {
        damping *= 10.0;
        continue;
      }
      const Eigen::VectorXd trial = theta + delta;
      LsqEval te;
      eval(trial, te);
      const double trial_cost = 0.5 * te.residual.squaredNorm();
      if (std::isfinite(trial_cost) && trial_cost < cost) {
        theta = trial;
        e = std::move(te);
        cost = trial_cost;
        damping = std::max(damping * 0.3, 1e-12);
        accepted = true;
        break;
      }
      damping *= 10.0;
    }
    if (!accepted) break;  // damping exhausted; gradient is our certificate
  }
  out.theta = theta;
  out.residual_norm = std::sqrt(2.0 * cost);
  out.iterations = it;
  return out;
}

void require_records(const SwarmDataset& data, std::size_t task_index, std::size_t min_runs,
                     const char* what) {
  data.validate();
  if (task_index >= data.task_count()) {
    throw Error(Error::Kind::InvalidArgument, "task index out of range");
  }
  if (data.runs() < min_runs) {
    throw Error(Error::Kind::Underdetermined,
                std::string(what) + " needs at least " + std::to_string(min_runs) +
                    " records, got " + std::to_string(data.runs()));
  }
}

Eigen::MatrixXd design_matrix(const SwarmDataset& data) {
  const Eigen::Index k = static_cast<Eigen::Index>(data.runs());
  const Eigen::Index m = static_cast<Eigen::Index>(data.domain_ids.size());
  Eigen::MatrixXd p(k, m);
  for (Eigen::Index r = 0; r < k; ++r) {
    for (Eigen::Index j = 0; j < m; ++j) p(r, j) = data.mixtures[r][j];
  }
  return p;
}

std::uint64_t restart_seed(const FitConfig& cfg, std::size_t task_index, int restart) {
  return substream_seed(cfg.seed ^ splitmix64(task_index + 0x51ULL), restart);
}

}  // namespace

std::string to_string(Family f) {
  switch (f) {
    case Family::LogLinear: return "log-linear";
    case Family::BiMix: return "bimix";
    case Family::AutoScale: return "autoscale";
    case Family::GaussianProcess: return "gp";
  }
  return "log-linear";
}

Family family_from_string(const std::string& s) {
  if (s == "log-linear") return Family::LogLinear;
  if (s == "bimix") return Family::BiMix;
  if (s == "autoscale") return Family::AutoScale;
  if (s == "gp") return Family::GaussianProcess;
  throw Error(Error::Kind::SchemaError, "unknown model family: " + s);
}

double TaskModel::predict(const Eigen::VectorXd& p) const {
  switch (family) {
    case Family::LogLinear:
      return c + safe_exp(A.dot(p));
    case Family::BiMix: {
      double y = 0.0;
      for (Eigen::Index j = 0; j < A.size(); ++j) {
        y += A(j) * std::pow(std::max(p(j), kBiMixFloor), -alpha(j));
      }
      return y;
    }
    case Family::AutoScale: {
      double y = c;
      for (Eigen::Index j = 0; j < A.size(); ++j) {
        y += std::pow(token_scale * (A(j) + p(j)), -alpha(j));
      }
      return y;
    }
    case Family::GaussianProcess: {
      double y = gp_ymean;
      const double inv2l2 = 1.0 / (2.0 * gp_lengthscale * gp_lengthscale);
      for (Eigen::Index l = 0; l < gp_x.rows(); ++l) {
        const double d2 = (p - gp_x.row(l).transpose()).squaredNorm();
        y += gp_coef(l) * gp_signal_var * std::exp(-d2 * inv2l2);
      }
      return y;
    }
  }
  return 0.0;
}

void TaskModel::predict_grad(const Eigen::VectorXd& p, Eigen::VectorXd& grad) const {
  grad.setZero(p.size());
  switch (family) {
    case Family::LogLinear:
      grad = safe_exp(A.dot(p)) * A;
      return;
    case Family::BiMix:
      for (Eigen::Index j = 0; j < A.size(); ++j) {
        const double pj = std::max(p(j), kBiMixFloor);
        grad(j) = -A(j) * alpha(j) * std::pow(pj, -alpha(j) - 1.0);
      }
      return;
    case Family::AutoScale:
      for (Eigen::Index j = 0; j < A.size(); ++j) {
        const double b = token_scale * (A(j) + p(j));
        grad(j) = -alpha(j) * token_scale * std::pow(b, -alpha(j) - 1.0);
      }
      return;
    case Family::GaussianProcess: {
      const double l2 = gp_lengthscale * gp_lengthscale;
      for (Eigen::Index l = 0; l < gp_x.rows(); ++l) {
        const Eigen::VectorXd diff = gp_x.row(l).transpose() - p;
        const double kern = gp_signal_var * std::exp(-diff.squaredNorm() / (2.0 * l2));
        grad += gp_coef(l) * kern * diff / l2;
      }
      return;
    }
  }
}

TaskModel fit_log_linear(const SwarmDataset& data, std::size_t task_index, const FitConfig& cfg) {
  const std::size_t m = data.domain_ids.size();
  require_records(data, task_index, m + 1, "log-linear fit");
  const Eigen::MatrixXd p = design_matrix(data);
  const Eigen::VectorXd y = data.scores.col(static_cast<Eigen::Index>(task_index));
  const Eigen::Index k = p.rows();

  auto eval = [&](const Eigen::VectorXd& theta, LsqEval& e) {
    const double c = safe_exp(theta(0));
    const Eigen::VectorXd a = theta.tail(m);
    e.residual.resize(k);
    e.jacobian.resize(k, theta.size());
    for (Eigen::Index r = 0; r < k; ++r) {
      const double ex = safe_exp(a.dot(p.row(r).transpose()));
      e.residual(r) = c + ex - y(r);
      e.jacobian(r, 0) = c;
      e.jacobian.row(r).tail(m) = ex * p.row(r);
    }
  };

  // Warm start: slightly undercut the smallest score, then ordinary least
  // squares on log(y - c0) for the slopes.
  const double ymin = y.minCoeff();
  const double c0 = ymin > 0.0 ? 0.9 * ymin : 1e-3;
  Eigen::VectorXd z(k);
  for (Eigen::Index r = 0; r < k; ++r) z(r) = std::log(std::max(y(r) - c0, 1e-12));
  const Eigen::VectorXd a0 = p.colPivHouseholderQr().solve(z);

  Eigen::VectorXd theta0(1 + m);
  theta0(0) = std::log(c0);
  theta0.tail(m) = a0;

  LsqOutcome best;
  int used = 0;
  for (int restart = 0; restart < std::max(1, cfg.restarts); ++restart) {
    Eigen::VectorXd start = theta0;
    if (restart > 0) {
      Rng rng(restart_seed(cfg, task_index, restart));
      for (Eigen::Index i = 0; i < start.size(); ++i) start(i) += 0.5 * rng.normal();
    }
    const LsqOutcome run = gauss_newton(eval, start, cfg.max_iters, cfg.grad_tol);
    ++used;
    if (run.residual_norm < best.residual_norm ||
        (run.converged && !best.converged && run.residual_norm <= best.residual_norm * (1.0 + 1e-12))) {
      best = run;
    }
    if (best.converged && best.residual_norm < 1e-12) break;  // already at machine noise
  }

  TaskModel model;
  model.family = Family::LogLinear;
  model.unit = data.tasks[task_index];
  model.covers = {data.tasks[task_index]};
  model.c = safe_exp(best.theta(0));
  model.A = best.theta.tail(m);
  model.diag.residual_norm = best.residual_norm;
  model.diag.restarts_used = used;
  model.diag.iterations = best.iterations;
  model.diag.converged = best.converged;
  if (!best.converged) {
    model.diag.warnings.push_back("no restart reached the gradient tolerance; best iterate returned");
  }
  return model;
}

TaskModel fit_bimix(const SwarmDataset& data, std::size_t task_index, const FitConfig& cfg) {
  const std::size_t m = data.domain_ids.size();
  require_records(data, task_index, m + 1, "bimix fit");
  Eigen::MatrixXd p = design_matrix(data);
  const Eigen::VectorXd y = data.scores.col(static_cast<Eigen::Index>(task_index));
  const Eigen::Index k = p.rows();

  bool floored = false;
  for (Eigen::Index r = 0; r < k; ++r) {
    for (Eigen::Index j = 0; j < p.cols(); ++j) {
      if (p(r, j) < kBiMixFloor) {
        p(r, j) = kBiMixFloor;
        floored = true;
      }
    }
  }
  const Eigen::MatrixXd logp = p.array().log().matrix();

  // theta = [log A (m), log alpha (m)]
  auto eval = [&](const Eigen::VectorXd& theta, LsqEval& e) {
    const Eigen::VectorXd ac = theta.head(m).array().exp();
    const Eigen::VectorXd al = theta.tail(m).array().exp();
    e.residual.resize(k);
    e.jacobian.resize(k, 2 * static_cast<Eigen::Index>(m));
    for (Eigen::Index r = 0; r < k; ++r) {
      double v = 0.0;
      for (std::size_t j = 0; j < m; ++j) {
        const Eigen::Index jj = static_cast<Eigen::Index>(j);
        const double term = ac(jj) * safe_exp(-al(jj) * logp(r, jj));
        v += term;
        e.jacobian(r, jj) = term;                                  // d/d logA
        e.jacobian(r, jj + m) = term * (-al(jj) * logp(r, jj));    // d/d logAlpha
      }
      e.residual(r) = v - y(r);
    }
  };

  Eigen::VectorXd theta0(2 * m);
  const double ymean = std::max(y.mean(), 1e-6);
  theta0.head(m).setConstant(std::log(ymean / static_cast<double>(m)));
  theta0.tail(m).setConstant(std::log(0.5));

  LsqOutcome best;
  int used = 0;
  for (int restart = 0; restart < std::max(1, cfg.restarts); ++restart) {
    Eigen::VectorXd start = theta0;
    if (restart > 0) {
      Rng rng(restart_seed(cfg, task_index, restart));
      for (Eigen::Index i = 0; i < start.size(); ++i) start(i) += 0.5 * rng.normal();
    }
    const LsqOutcome run = gauss_newton(eval, start, cfg.max_iters, cfg.grad_tol);
    ++used;
    if (run.residual_norm < best.residual_norm) best = run;
    if (best.converged && best.residual_norm < 1e-12) break;
  }

  TaskModel model;
  model.family = Family::BiMix;
  model.unit = data.tasks[task_index];
  model.covers = {data.tasks[task_index]};
  model.A = best.theta.head(m).array().exp();
  model.alpha = best.theta.tail(m).array().exp();
  model.diag.residual_norm = best.residual_norm;
  model.diag.restarts_used = used;
  model.diag.iterations = best.iterations;
  model.diag.converged = best.converged;
  if (floored) {
    model.diag.warnings.push_back("zero mixture weights floored at 1e-6 for negative powers");
  }
  if (!best.converged) {
    model.diag.warnings.push_back("no restart reached the gradient tolerance; best iterate returned");
  }
  return model;
}

TaskModel fit_autoscale(const SwarmDataset& data, std::size_t task_index, const FitConfig& cfg) {
  const std::size_t m = data.domain_ids.size();
  require_records(data, task_index, m + 1, "autoscale fit");
  if (!(cfg.token_scale > 0.0)) {
    throw Error(Error::Kind::InvalidArgument, "autoscale needs a positive token scale R");
  }
  const double R = cfg.token_scale;
  const Eigen::MatrixXd p = design_matrix(data);
  const Eigen::VectorXd y = data.scores.col(static_cast<Eigen::Index>(task_index));
  const Eigen::Index k = p.rows();

  auto sigmoid = [](double x) { return 1.0 / (1.0 + std::exp(-x)); };

  // theta = [gamma, u (m), v (m)]; c = exp(gamma), A = sigmoid(u), alpha = exp(v)
  auto eval = [&](const Eigen::VectorXd& theta, LsqEval& e) {
    const double c = safe_exp(theta(0));
    e.residual.resize(k);
    e.jacobian.resize(k, theta.size());
    for (Eigen::Index r = 0; r < k; ++r) {
      double v = c;
      e.jacobian(r, 0) = c;
      for (std::size_t j = 0; j < m; ++j) {
        const Eigen::Index jj = static_cast<Eigen::Index>(j);
        const double aj = sigmoid(theta(1 + jj));
        const double alj = safe_exp(theta(1 + static_cast<Eigen::Index>(m) + jj));
        const double b = R * (aj + p(r, jj));
        const double term = safe_exp(-alj * std::log(b));
        v += term;
        e.jacobian(r, 1 + jj) = term * (-alj / b) * R * aj * (1.0 - aj);
        e.jacobian(r, 1 + static_cast<Eigen::Index>(m) + jj) = term * (-std::log(b)) * alj;
      }
      e.residual(r) = v - y(r);
    }
  };

  Eigen::VectorXd theta0(1 + 2 * m);
  const double ymin = y.minCoeff();
  theta0(0) = std::log(std::max(ymin > 0.0 ? 0.9 * ymin : 1e-3, 1e-6));
  theta0.segment(1, m).setZero();          // A = 0.5
  theta0.tail(m).setConstant(std::log(1.0));  // alpha = 1

  LsqOutcome best;
  int used = 0;
  for (int restart = 0; restart < std::max(1, cfg.restarts); ++restart) {
    Eigen::VectorXd start = theta0;
    if (restart > 0) {
      Rng rng(restart_seed(cfg, task_index, restart));
      for (Eigen::Index i = 0; i < start.size(); ++i) start(i) += 0.5 * rng.normal();
    }
    const LsqOutcome run = gauss_newton(eval, start, cfg.max_iters, cfg.grad_tol);
    ++used;
    if (run.residual_norm < best.residual_norm) best = run;
    if (best.converged && best.residual_norm < 1e-12) break;
  }

  TaskModel model;
  model.family = Family::AutoScale;
  model.unit = data.tasks[task_index];
  model.covers = {data.tasks[task_index]};
  model.c = safe_exp(best.theta(0));
  model.A.resize(m);
  model.alpha.resize(m);
  for (std::size_t j = 0; j < m; ++j) {
    model.A(static_cast<Eigen::Index>(j)) = sigmoid(best.theta(1 + static_cast<Eigen::Index>(j)));
    model.alpha(static_cast<Eigen::Index>(j)) =
        safe_exp(best.theta(1 + static_cast<Eigen::Index>(m + j)));
  }
  model.token_scale = R;
  model.diag.residual_norm = best.residual_norm;
  model.diag.restarts_used = used;
  model.diag.iterations = best.iterations;
  model.diag.converged = best.converged;
  if (!best.converged) {
    model.diag.warnings.push_back("no restart reached the gradient tolerance; best iterate returned");
  }
  return model;
}

TaskModel fit_gp(const SwarmDataset& data, std::size_t task_index, const FitConfig& cfg) {
  require_records(data, task_index, 2, "gp fit");
  const Eigen::MatrixXd x = design_matrix(data);
  const Eigen::VectorXd y = data.scores.col(static_cast<Eigen::Index>(task_index));
  const Eigen::Index k = x.rows();
  const double ymean = y.mean();
  const Eigen::VectorXd yc = y.array() - ymean;

  Eigen::MatrixXd d2(k, k);
  for (Eigen::Index a = 0; a < k; ++a) {
    for (Eigen::Index b = 0; b < k; ++b) {
      d2(a, b) = (x.row(a) - x.row(b)).squaredNorm();
    }
  }

  double best_lml = -std::numeric_limits<double>::infinity();
  TaskModel model;
  model.family = Family::GaussianProcess;
  model.unit = data.tasks[task_index];
  model.covers = {data.tasks[task_index]};
  model.gp_x = x;
  model.gp_ymean = ymean;
  bool any = false;

  for (double l : cfg.gp_lengthscales) {
    for (double s2 : cfg.gp_signal_vars) {
      for (double n2 : cfg.gp_noise_vars) {
        Eigen::MatrixXd km = (d2.array() * (-1.0 / (2.0 * l * l))).exp().matrix() * s2;
        km.diagonal().array() += n2;
        Eigen::LLT<Eigen::MatrixXd> llt;
        double jitter = 0.0;
        int attempt = 0;
        for (; attempt < 4; ++attempt) {
          Eigen::MatrixXd km_j = km;
          km_j.diagonal().array() += jitter;
          llt.compute(km_j);
          if (llt.info() == Eigen::Success) break;
          jitter += 1e-8;
        }
        if (llt.info() != Eigen::Success) {
          throw Error(Error::Kind::SingularKernel,
                      "kernel matrix not positive definite after 3 jitter retries");
        }
        const Eigen::VectorXd coef = llt.solve(yc);
        double logdet = 0.0;
        const auto& lmat = llt.matrixL();
        for (Eigen::Index i = 0; i < k; ++i) logdet += std::log(lmat(i, i));
        const double lml = -0.5 * yc.dot(coef) - logdet -
                           0.5 * static_cast<double>(k) * std::log(2.0 * M_PI);
        if (lml > best_lml) {
          best_lml = lml;
          model.gp_lengthscale = l;
          model.gp_signal_var = s2;
          model.gp_noise_var = n2;
          model.gp_coef = coef;
          any = true;
        }
      }
    }
  }
  if (!any) {
    throw Error(Error::Kind::SingularKernel, "gp hyperparameter grid produced no usable kernel");
  }
  model.diag.converged = true;
  model.diag.residual_norm = 0.0;
  for (Eigen::Index r = 0; r < k; ++r) {
    const double pred = model.predict(x.row(r).transpose());
    model.diag.residual_norm += (pred - y(r)) * (pred - y(r));
  }
  model.diag.residual_norm = std::sqrt(model.diag.residual_norm);
  return model;
}

namespace {

TaskModel fit_one(const SwarmDataset& data, std::size_t task_index, Family family,
                  const FitConfig& cfg) {
  switch (family) {
    case Family::LogLinear: return fit_log_linear(data, task_index, cfg);
    case Family::BiMix: return fit_bimix(data, task_index, cfg);
    case Family::AutoScale: return fit_autoscale(data, task_index, cfg);
    case Family::GaussianProcess: return fit_gp(data, task_index, cfg);
  }
  throw Error(Error::Kind::InvalidArgument, "unknown family");
}

SwarmDataset derived_dataset(const SwarmDataset& data, const std::string& unit_name,
                             const std::vector<std::size_t>& member_cols) {
  SwarmDataset out;
  out.over_version = data.over_version;
  out.domain_ids = data.domain_ids;
  out.tasks = {unit_name};
  out.mixtures = data.mixtures;
  out.scores.resize(data.scores.rows(), 1);
  out.scores.setZero();
  for (std::size_t c : member_cols) {
    out.scores.col(0) += data.scores.col(static_cast<Eigen::Index>(c));
  }
  out.scores.col(0) /= static_cast<double>(member_cols.size());
  return out;
}

}  // namespace

std::vector<TaskModel> fit_models(const SwarmDataset& data, const GranularitySpec& gran,
                                  Family family, const FitConfig& cfg) {
  data.validate();
  struct Unit {
    std::string name;
    std::vector<std::size_t> member_cols;
    std::vector<std::string> covers;
  };
  std::vector<Unit> units;

  switch (gran.mode) {
    case GranularitySpec::Mode::PerTask:
      for (std::size_t i = 0; i < data.task_count(); ++i) {
        units.push_back({data.tasks[i], {i}, {data.tasks[i]}});
      }
      break;
    case GranularitySpec::Mode::PerFamily: {
      std::map<std::string, Unit> grouped;
      for (std::size_t i = 0; i < data.task_count(); ++i) {
        const auto it = gran.task_family.find(data.tasks[i]);
        if (it == gran.task_family.end()) {
          throw Error(Error::Kind::MissingModel,
                      "per-family map does not cover task: " + data.tasks[i]);
        }
        Unit& u = grouped[it->second];
        u.name = it->second;
        u.member_cols.push_back(i);
        u.covers.push_back(data.tasks[i]);
      }
      for (auto& [name, u] : grouped) units.push_back(std::move(u));
      break;
    }
    case GranularitySpec::Mode::Aggregated: {
      Unit u;
      u.name = "aggregate";
      for (std::size_t i = 0; i < data.task_count(); ++i) {
        u.member_cols.push_back(i);
        u.covers.push_back(data.tasks[i]);
      }
      units.push_back(std::move(u));
      break;
    }
  }

  std::vector<TaskModel> models(units.size());
  parallel_for(units.size(), [&](std::size_t u) {
    FitConfig unit_cfg = cfg;
    unit_cfg.seed = substream_seed(cfg.seed, u);
    if (gran.mode == GranularitySpec::Mode::PerTask) {
      models[u] = fit_one(data, units[u].member_cols[0], family, unit_cfg);
    } else {
      const SwarmDataset derived = derived_dataset(data, units[u].name, units[u].member_cols);
      models[u] = fit_one(derived, 0, family, unit_cfg);
      models[u].covers = units[u].covers;
    }
  });
  return models;
}

double predict_for_task(const std::vector<TaskModel>& models, const std::string& task,
                        const Eigen::VectorXd& p) {
  for (const auto& m : models) {
    if (std::find(m.covers.begin(), m.covers.end(), task) != m.covers.end()) {
      return m.predict(p);
    }
  }
  throw Error(Error::Kind::MissingModel, "no fitted model covers task: " + task);
}

double regression_fit_score(const std::vector<TaskModel>& models, const SwarmDataset& holdout) {
  holdout.validate();
  std::vector<double> preds, truths;
  for (std::size_t i = 0; i < holdout.task_count(); ++i) {
    for (std::size_t r = 0; r < holdout.runs(); ++r) {
      const Eigen::VectorXd p = Eigen::Map<const Eigen::VectorXd>(
          holdout.mixtures[r].weights().data(), holdout.mixtures[r].size());
      preds.push_back(predict_for_task(models, holdout.tasks[i], p));
      truths.push_back(holdout.scores(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(i)));
    }
  }
  const std::size_t n = preds.size();
  double mp = 0.0, mt = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    mp += preds[i];
    mt += truths[i];
  }
  mp /= n;
  mt /= n;
  double sp = 0.0, st = 0.0, cov = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    sp += (preds[i] - mp) * (preds[i] - mp);
    st += (truths[i] - mt) * (truths[i] - mt);
    cov += (preds[i] - mp) * (truths[i] - mt);
  }
  if (sp <= 0.0 || st <= 0.0) {
    throw Error(Error::Kind::ZeroVariance, "fit score undefined: constant predictions or truths");
  }
  return cov / std::sqrt(sp * st);
}

namespace {

class ModelAggregate : public Objective {
 public:
  ModelAggregate(std::vector<TaskModel> models, std::vector<double> weights, int dim)
      : models_(std::move(models)), w_(std::move(weights)), dim_(dim) {
    all_log_linear_ = std::all_of(models_.begin(), models_.end(), [](const TaskModel& m) {
      return m.family == Family::LogLinear;
    });
  }

  int dim() const override { return dim_; }

  double value(const Eigen::VectorXd& p) const override {
    double v = 0.0;
    for (std::size_t i = 0; i < models_.size(); ++i) v += w_[i] * models_[i].predict(p);
    return v;
  }

  double value_grad(const Eigen::VectorXd& p, Eigen::VectorXd& grad) const override {
    grad.setZero(p.size());
    double v = 0.0;
    Eigen::VectorXd g(p.size());
    for (std::size_t i = 0; i < models_.size(); ++i) {
      v += w_[i] * models_[i].predict(p);
      models_[i].predict_grad(p, g);
      grad += w_[i] * g;
    }
    return v;
  }

  bool has_hessian() const override { return all_log_linear_; }

  void hessian(const Eigen::VectorXd& p, Eigen::MatrixXd& h) const override {
    if (!all_log_linear_) {
      throw Error(Error::Kind::WrongFamily, "analytic hessian available for log-linear units only");
    }
    h.setZero(dim_, dim_);
    for (std::size_t i = 0; i < models_.size(); ++i) {
      const double ex = safe_exp(models_[i].A.dot(p));
      h.noalias() += w_[i] * ex * models_[i].A * models_[i].A.transpose();
    }
  }

 private:
  std::vector<TaskModel> models_;
  std::vector<double> w_;
  int dim_;
  bool all_log_linear_;
};

}  // namespace

std::unique_ptr<Objective> aggregate_objective(const std::vector<TaskModel>& models,
                                               const std::vector<std::string>& tasks) {
  if (models.empty() || tasks.empty()) {
    throw Error(Error::Kind::MissingModel, "aggregate objective needs models and tasks");
  }
  std::set<std::string> covered;
  std::vector<double> weights;
  const double n = static_cast<double>(tasks.size());
  for (const auto& m : models) {
    for (const auto& t : m.covers) {
      if (!covered.insert(t).second) {
        throw Error(Error::Kind::MissingModel, "task covered by multiple units: " + t);
      }
    }
    weights.push_back(static_cast<double>(m.covers.size()) / n);
  }
  for (const auto& t : tasks) {
    if (!covered.count(t)) {
      throw Error(Error::Kind::MissingModel, "no unit covers task: " + t);
    }
  }
  int dim = 0;
  for (const auto& m : models) {
    const int d = m.family == Family::GaussianProcess ? static_cast<int>(m.gp_x.cols())
                                                      : static_cast<int>(m.A.size());
    if (dim == 0) dim = d;
    if (d != dim) throw Error(Error::Kind::DimensionMismatch, "models disagree on dimension");
  }
  return std::make_unique<ModelAggregate>(models, weights, dim);
}

// --- JSON ---------------------------------------------------------------------

namespace {

std::vector<double> to_vec(const Eigen::VectorXd& v) {
  return std::vector<double>(v.data(), v.data() + v.size());
}

Eigen::VectorXd from_vec(const std::vector<double>& v) {
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

}  // namespace

std::string models_to_json(const std::vector<TaskModel>& models,
                           const std::vector<std::string>& domain_ids) {
  ojson j;
  j["domain_ids"] = domain_ids;
  j["models"] = ojson::array();
  for (const auto& m : models) {
    ojson e;
    e["family"] = to_string(m.family);
    e["unit"] = m.unit;
    e["covers"] = m.covers;
    switch (m.family) {
      case Family::LogLinear:
        e["c"] = m.c;
        e["A"] = to_vec(m.A);
        break;
      case Family::BiMix:
        e["A"] = to_vec(m.A);
        e["alpha"] = to_vec(m.alpha);
        break;
      case Family::AutoScale:
        e["c"] = m.c;
        e["A"] = to_vec(m.A);
        e["alpha"] = to_vec(m.alpha);
        e["token_scale"] = m.token_scale;
        break;
      case Family::GaussianProcess: {
        e["lengthscale"] = m.gp_lengthscale;
        e["signal_var"] = m.gp_signal_var;
        e["noise_var"] = m.gp_noise_var;
        e["ymean"] = m.gp_ymean;
        e["coef"] = to_vec(m.gp_coef);
        ojson rows = ojson::array();
        for (Eigen::Index r = 0; r < m.gp_x.rows(); ++r) {
          std::vector<double> row(m.gp_x.cols());
          for (Eigen::Index c2 = 0; c2 < m.gp_x.cols(); ++c2) row[c2] = m.gp_x(r, c2);
          rows.push_back(row);
        }
        e["train_x"] = rows;
        break;
      }
    }
    ojson d;
    d["residual_norm"] = m.diag.residual_norm;
    d["restarts_used"] = m.diag.restarts_used;
    d["iterations"] = m.diag.iterations;
    d["converged"] = m.diag.converged;
    d["warnings"] = m.diag.warnings;
    e["diagnostics"] = d;
    j["models"].push_back(e);
  }
  return j.dump(2) + "\n";
}

std::vector<TaskModel> models_from_json(const std::string& text,
                                        std::vector<std::string>* domain_ids) {
  ojson j;
  try {
    j = ojson::parse(text);
  } catch (const std::exception& e) {
    throw Error(Error::Kind::SchemaError, std::string("models json parse error: ") + e.what());
  }
  if (domain_ids && j.contains("domain_ids")) {
    *domain_ids = j["domain_ids"].get<std::vector<std::string>>();
  }
  std::vector<TaskModel> models;
  for (const auto& e : j.at("models")) {
    TaskModel m;
    m.family = family_from_string(e.at("family").get<std::string>());
    m.unit = e.at("unit").get<std::string>();
    m.covers = e.at("covers").get<std::vector<std::string>>();
    switch (m.family) {
      case Family::LogLinear:
        m.c = e.at("c").get<double>();
        m.A = from_vec(e.at("A").get<std::vector<double>>());
        break;
      case Family::BiMix:
        m.A = from_vec(e.at("A").get<std::vector<double>>());
        m.alpha = from_vec(e.at("alpha").get<std::vector<double>>());
        break;
      case Family::AutoScale:
        m.c = e.at("c").get<double>();
        m.A = from_vec(e.at("A").get<std::vector<double>>());
        m.alpha = from_vec(e.at("alpha").get<std::vector<double>>());
        m.token_scale = e.at("token_scale").get<double>();
        break;
      case Family::GaussianProcess: {
        m.gp_lengthscale = e.at("lengthscale").get<double>();
        m.gp_signal_var = e.at("signal_var").get<double>();
        m.gp_noise_var = e.at("noise_var").get<double>();
        m.gp_ymean = e.at("ymean").get<double>();
        m.gp_coef = from_vec(e.at("coef").get<std::vector<double>>());
        const auto& rows = e.at("train_x");
        m.gp_x.resize(static_cast<Eigen::Index>(rows.size()),
                      rows.empty() ? 0 : static_cast<Eigen::Index>(rows[0].size()));
        for (std::size_t r = 0; r < rows.size(); ++r) {
          const auto row = rows[r].get<std::vector<double>>();
          for (std::size_t c2 = 0; c2 < row.size(); ++c2) {
            m.gp_x(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c2)) = row[c2];
          }
        }
        break;
      }
    }
    if (e.contains("diagnostics")) {
      const auto& d = e["diagnostics"];
      m.diag.residual_norm = d.value("residual_norm", 0.0);
      m.diag.restarts_used = d.value("restarts_used", 0);
      m.diag.iterations = d.value("iterations", 0);
      m.diag.converged = d.value("converged", true);
      if (d.contains("warnings")) m.diag.warnings = d["warnings"].get<std::vector<std::string>>();
    }
    models.push_back(std::move(m));
  }
  return models;
}

std::vector<TaskModel> load_models(const std::string& path, std::vector<std::string>* domain_ids) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Error::Kind::Io, "cannot open models json: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return models_from_json(ss.str(), domain_ids);
}

void save_models(const std::vector<TaskModel>& models,
                 const std::vector<std::string>& domain_ids, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(Error::Kind::Io, "cannot write models json: " + path);
  out << models_to_json(models, domain_ids);
}

}  // namespace mixopt
