#pragma once

// Generic first-order solver for min ||V||_1 s.t. dist(V^T X + b 1^T, A) <= eta,
// used as an independent reference for the ADMM layer solver. The penalized
// problem min ||V||_1 + (lam/2) dist^2 is solved by FISTA, and lam is bisected
// until the constraint is just met.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>

namespace amc::testing {

/// Projection onto A: equal to Y on its support, nonpositive elsewhere.
inline Eigen::MatrixXd project_fidelity(const Eigen::MatrixXd& pre, const Eigen::MatrixXd& y) {
  Eigen::MatrixXd a = pre;
  for (Eigen::Index i = 0; i < pre.rows(); ++i)
    for (Eigen::Index j = 0; j < pre.cols(); ++j) a(i, j) = y(i, j) > 0.0 ? y(i, j) : std::min(pre(i, j), 0.0);
  return a;
}

inline double fidelity_distance(const Eigen::MatrixXd& v, const Eigen::MatrixXd& x, const Eigen::MatrixXd& y,
                                const Eigen::VectorXd& b) {
  const Eigen::MatrixXd pre = (v.transpose() * x).colwise() + b;
  return (pre - project_fidelity(pre, y)).norm();
}

struct OracleResult {
  Eigen::MatrixXd v;
  double l1 = 0.0;
  double distance = 0.0;
};

inline OracleResult l1_oracle(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y, const Eigen::VectorXd& b,
                              double eta, const Eigen::MatrixXd& feasible_start, int fista_iters = 20000,
                              int bisections = 40) {
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(x);
  const double s2 = std::pow(svd.singularValues()(0), 2);
  auto solve = [&](double lam, Eigen::MatrixXd v) {
    Eigen::MatrixXd yk = v;
    double t = 1.0;
    const double step = 1.0 / (lam * s2);
    for (int k = 0; k < fista_iters; ++k) {
      const Eigen::MatrixXd pre = (yk.transpose() * x).colwise() + b;
      const Eigen::MatrixXd grad = lam * x * (pre - project_fidelity(pre, y)).transpose();
      const Eigen::MatrixXd vn = (yk - step * grad).unaryExpr([&](double a) {
        return a > step ? a - step : (a < -step ? a + step : 0.0);
      });
      const double tn = (1.0 + std::sqrt(1.0 + 4.0 * t * t)) / 2.0;
      yk = vn + ((t - 1.0) / tn) * (vn - v);
      v = vn;
      t = tn;
    }
    return v;
  };
  double lo = -10.0, hi = 10.0;
  Eigen::MatrixXd best = feasible_start;
  for (int it = 0; it < bisections; ++it) {
    const double mid = 0.5 * (lo + hi);
    const Eigen::MatrixXd v = solve(std::exp(mid), best);
    if (fidelity_distance(v, x, y, b) > eta) {
      lo = mid;
    } else {
      hi = mid;
      best = v;
    }
  }
  return {best, best.lpNorm<1>(), fidelity_distance(best, x, y, b)};
}

}  // namespace amc::testing
