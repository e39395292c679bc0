#pragma once

// Test-only reference implementations, kept independent of the library's
// solver paths: exhaustive grids and closed-form active-set enumeration.

#include <cmath>
#include <functional>
#include <limits>
#include <vector>

#include <Eigen/Dense>

namespace testsupport {

/// Exact Euclidean projection onto {sum p = 1, 0 <= p <= caps} by enumerating
/// every {zero, cap, free} assignment and checking feasibility + KKT.
/// Exponential in m; fine for m <= 10.
inline Eigen::VectorXd brute_force_projection(const Eigen::VectorXd& v,
                                              const std::vector<double>& caps) {
  const int m = static_cast<int>(v.size());
  const int total = static_cast<int>(std::pow(3, m));
  Eigen::VectorXd best;
  double best_dist = std::numeric_limits<double>::infinity();
  for (int code = 0; code < total; ++code) {
    int c = code;
    std::vector<int> state(m);  // 0 zero, 1 cap, 2 free
    for (int j = 0; j < m; ++j) {
      state[j] = c % 3;
      c /= 3;
    }
    double fixed_mass = 0.0;
    double free_v = 0.0;
    int free_count = 0;
    for (int j = 0; j < m; ++j) {
      if (state[j] == 1) fixed_mass += caps[j];
      if (state[j] == 2) {
        free_v += v(j);
        ++free_count;
      }
    }
    Eigen::VectorXd p(m);
    double tau = 0.0;
    if (free_count > 0) {
      tau = (free_v - (1.0 - fixed_mass)) / free_count;
    } else if (std::abs(fixed_mass - 1.0) > 1e-12) {
      continue;  // fully pinned but does not sum to 1
    }
    bool ok = true;
    for (int j = 0; j < m && ok; ++j) {
      if (state[j] == 0) {
        p(j) = 0.0;
        if (v(j) - tau > 1e-12) ok = false;  // KKT: would want to grow
      } else if (state[j] == 1) {
        p(j) = caps[j];
        if (v(j) - tau < caps[j] - 1e-12) ok = false;  // KKT: would want to shrink
      } else {
        p(j) = v(j) - tau;
        if (p(j) < -1e-12 || p(j) > caps[j] + 1e-12) ok = false;
      }
    }
    if (!ok) continue;
    const double dist = (p - v).squaredNorm();
    if (dist < best_dist) {
      best_dist = dist;
      best = p;
    }
  }
  return best;
}

/// Exhaustive minimization over the simplex at the given grid step
/// (m <= 3), honoring caps. Returns the best grid point.
inline Eigen::VectorXd grid_search_simplex(
    int m, double step, const std::vector<double>& caps,
    const std::function<double(const Eigen::VectorXd&)>& objective) {
  const int n = static_cast<int>(std::lround(1.0 / step));
  Eigen::VectorXd best;
  double best_val = std::numeric_limits<double>::infinity();
  auto consider = [&](const Eigen::VectorXd& p) {
    if (!caps.empty()) {
      for (int j = 0; j < m; ++j) {
        if (p(j) > caps[j] + 1e-12) return;
      }
    }
    const double val = objective(p);
    if (val < best_val) {
      best_val = val;
      best = p;
    }
  };
  if (m == 1) {
    Eigen::VectorXd p(1);
    p << 1.0;
    consider(p);
  } else if (m == 2) {
    for (int i = 0; i <= n; ++i) {
      Eigen::VectorXd p(2);
      p << i * step, 1.0 - i * step;
      consider(p);
    }
  } else if (m == 3) {
    for (int i = 0; i <= n; ++i) {
      for (int j = 0; j + i <= n; ++j) {
        Eigen::VectorXd p(3);
        p << i * step, j * step, 1.0 - (i + j) * step;
        consider(p);
      }
    }
  }
  return best;
}

/// Central finite-difference gradient.
inline Eigen::VectorXd fd_gradient(const std::function<double(const Eigen::VectorXd&)>& f,
                                   const Eigen::VectorXd& x, double h = 1e-6) {
  Eigen::VectorXd g(x.size());
  for (int j = 0; j < x.size(); ++j) {
    Eigen::VectorXd hi = x, lo = x;
    hi(j) += h;
    lo(j) -= h;
    g(j) = (f(hi) - f(lo)) / (2.0 * h);
  }
  return g;
}

}  // namespace testsupport
