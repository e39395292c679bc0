#include "mixopt/optimizer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "mixopt/rng.hpp"

namespace mixopt {

namespace {

constexpr double kKlFloor = 1e-12;  // interior floor for KL gradient only

void check_caps(const std::vector<double>& caps, int dim) {
  if (caps.empty()) return;
  if (static_cast<int>(caps.size()) != dim) {
    throw Error(Error::Kind::DimensionMismatch, "caps length does not match dimension");
  }
  double total = 0.0;
  for (double c : caps) {
    if (!(c >= 0.0)) throw Error(Error::Kind::InfeasibleCaps, "caps must be nonnegative");
    total += std::min(1.0, c);
  }
  if (total < 1.0) {
    throw Error(Error::Kind::InfeasibleCaps, "cap sum below 1; no feasible mixture");
  }
}

std::vector<double> effective_caps(const SolveSpec& spec, int dim) {
  std::vector<double> caps = spec.caps.empty() ? std::vector<double>(dim, 1.0) : spec.caps;
  if (spec.lambda > 0.0) {
    if (static_cast<int>(spec.anchor.size()) != dim) {
      throw Error(Error::Kind::DimensionMismatch, "KL anchor required when lambda > 0");
    }
    // Zero anchor mass makes KL infinite there; pin those coordinates to 0.
    for (int j = 0; j < dim; ++j) {
      if (spec.anchor[j] <= 0.0) caps[j] = 0.0;
    }
  }
  check_caps(caps, dim);
  return caps;
}

bool within_caps(const Eigen::VectorXd& p, const std::vector<double>& caps, double tol) {
  for (int j = 0; j < p.size(); ++j) {
    if (p(j) > caps[j] + tol) return false;
  }
  return true;
}

}  // namespace

double kl_divergence(const Eigen::VectorXd& p, const Eigen::VectorXd& q) {
  if (p.size() != q.size()) {
    throw Error(Error::Kind::DimensionMismatch, "KL dimension mismatch");
  }
  double kl = 0.0;
  for (int j = 0; j < p.size(); ++j) {
    if (p(j) <= 0.0) continue;
    if (q(j) <= 0.0) return std::numeric_limits<double>::infinity();
    kl += p(j) * std::log(p(j) / q(j));
  }
  return kl;
}

Eigen::VectorXd project_capped_simplex(const Eigen::VectorXd& v,
                                       const std::vector<double>& caps_in) {
  const int m = static_cast<int>(v.size());
  std::vector<double> caps = caps_in.empty() ? std::vector<double>(m, 1.0) : caps_in;
  check_caps(caps, m);

  auto mass = [&](double tau) {
    double s = 0.0;
    for (int j = 0; j < m; ++j) {
      s += std::clamp(v(j) - tau, 0.0, caps[j]);
    }
    return s;
  };

  // mass(tau) is continuous and nonincreasing; bracket the root.
  double lo = v.minCoeff() - 1.0;  // all coordinates at their cap -> mass >= 1
  double hi = v.maxCoeff();        // all coordinates at zero -> mass = 0
  for (int j = 0; j < m; ++j) lo = std::min(lo, v(j) - caps[j]);
  for (int it = 0; it < 200 && hi - lo > 1e-16 * std::max(1.0, std::abs(hi)); ++it) {
    const double mid = 0.5 * (lo + hi);
    if (mass(mid) >= 1.0) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  const double tau = 0.5 * (lo + hi);
  Eigen::VectorXd p(m);
  for (int j = 0; j < m; ++j) p(j) = std::clamp(v(j) - tau, 0.0, caps[j]);
  return p;
}

SolveResult solve_exact(const Objective& objective, const SolveSpec& spec) {
  const int m = objective.dim();
  const std::vector<double> caps = effective_caps(spec, m);

  Eigen::VectorXd anchor;
  if (spec.lambda > 0.0) {
    anchor = Eigen::Map<const Eigen::VectorXd>(spec.anchor.data(), m);
  }

  auto total_value_grad = [&](const Eigen::VectorXd& p, Eigen::VectorXd& grad) {
    double val = objective.value_grad(p, grad);
    if (spec.lambda > 0.0) {
      for (int j = 0; j < m; ++j) {
        if (anchor(j) <= 0.0) continue;  // coordinate pinned to 0 by caps
        const double pj = std::max(p(j), kKlFloor);
        val += spec.lambda * (p(j) > 0.0 ? p(j) * std::log(p(j) / anchor(j)) : 0.0);
        grad(j) += spec.lambda * (std::log(pj / anchor(j)) + 1.0);
      }
    }
    return val;
  };
  auto total_value = [&](const Eigen::VectorXd& p) {
    double val = objective.value(p);
    if (spec.lambda > 0.0) {
      for (int j = 0; j < m; ++j) {
        if (p(j) > 0.0 && anchor(j) > 0.0) val += spec.lambda * p(j) * std::log(p(j) / anchor(j));
      }
    }
    return val;
  };

  // Start from the anchor when present, else uniform; both projected.
  Eigen::VectorXd start = spec.lambda > 0.0
                              ? anchor
                              : Eigen::VectorXd::Constant(m, 1.0 / m);
  Eigen::VectorXd p = project_capped_simplex(start, caps);

  Eigen::VectorXd grad(m);
  double fval = total_value_grad(p, grad);

  SolveResult best;
  best.point = p;
  best.value = fval;

  double step = 1.0;
  int stalled_streak = 0;
  SolveDiagnostics diag;
  diag.converged = false;

  int it = 0;
  for (; it < spec.max_iters; ++it) {
    // Stationarity measure: unit-step projected gradient residual.
    const Eigen::VectorXd residual = p - project_capped_simplex(p - grad, caps);
    diag.projected_grad_norm = residual.norm();
    if (diag.projected_grad_norm < spec.tol) {
      diag.converged = true;
      break;
    }

    bool accepted = false;
    for (int bt = 0; bt < 60; ++bt) {
      const Eigen::VectorXd cand = project_capped_simplex(p - step * grad, caps);
      const double cand_val = total_value(cand);
      const double decrease = grad.dot(p - cand);
      if (cand_val <= fval - 1e-4 * decrease + 1e-18 * std::abs(fval)) {
        p = cand;
        fval = cand_val;
        accepted = true;
        step = std::min(step * 1.3, 1e8);
        break;
      }
      step *= 0.5;
    }
    if (accepted) {
      stalled_streak = 0;
      if (fval < best.value) {
        best.value = fval;
        best.point = p;
      }
      fval = total_value_grad(p, grad);
    } else {
      if (++stalled_streak >= 100) {
        diag.stalled = true;
        break;
      }
      step = 1.0;  // reset and retry from a fresh step size
    }
  }

  if (fval <= best.value) {
    best.value = fval;
    best.point = p;
  }
  diag.iterations = it;
  for (int j = 0; j < m; ++j) {
    if (caps[j] < 1.0 && best.point(j) >= caps[j] - 1e-9) diag.active_caps.push_back(j);
  }
  best.diag = diag;
  return best;
}

SolveResult solve_search(const Objective& objective, const SolveSpec& spec) {
  const int m = objective.dim();
  if (spec.candidates < 1) {
    throw Error(Error::Kind::InvalidArgument, "search needs at least one candidate");
  }
  const std::vector<double> caps = effective_caps(spec, m);

  Eigen::VectorXd anchor;
  if (spec.lambda > 0.0) {
    anchor = Eigen::Map<const Eigen::VectorXd>(spec.anchor.data(), m);
  }
  auto score = [&](const Eigen::VectorXd& p) {
    double val = objective.value(p);
    if (spec.lambda > 0.0) val += spec.lambda * kl_divergence(p, anchor);
    return val;
  };

  std::vector<double> prior =
      spec.anchor.empty() ? std::vector<double>(m, 1.0 / m) : spec.anchor;

  SolveResult best;
  best.value = std::numeric_limits<double>::infinity();
  bool found = false;
  int feasible_count = 0;
  std::uint64_t draw_counter = 0;

  for (int round = 0; round < std::max(1, spec.rounds); ++round) {
    const double conc = round == 0 ? spec.concentration_first : spec.concentration_later;
    std::vector<double> alpha(m);
    for (int j = 0; j < m; ++j) alpha[j] = std::max(conc * prior[j], 1e-3);

    for (int cidx = 0; cidx < spec.candidates; ++cidx) {
      Rng rng(substream_seed(spec.seed, draw_counter++));
      const std::vector<double> draw = rng.dirichlet(alpha);
      Eigen::VectorXd cand = Eigen::Map<const Eigen::VectorXd>(draw.data(), m);
      if (!within_caps(cand, caps, 1e-12)) continue;
      ++feasible_count;
      const double val = score(cand);
      if (val < best.value) {  // strict: ties keep the earlier candidate
        best.value = val;
        best.point = cand;
        found = true;
      }
    }
    if (found) {
      prior.assign(best.point.data(), best.point.data() + m);
    }
  }

  if (!found) {
    throw Error(Error::Kind::NoFeasibleCandidate,
                "all sampled candidates violated the repetition caps");
  }
  best.diag.converged = true;
  best.diag.feasible_candidates = feasible_count;
  for (int j = 0; j < m; ++j) {
    if (caps[j] < 1.0 && best.point(j) >= caps[j] - 1e-9) best.diag.active_caps.push_back(j);
  }
  return best;
}

SolveResult solve(const Objective& objective, const SolveSpec& spec) {
  return spec.solver == SolverKind::Exact ? solve_exact(objective, spec)
                                          : solve_search(objective, spec);
}

}  // namespace mixopt
