// Test-only reference implementations, deliberately independent of the
// library's solution paths: quadrature, finite differences, and a projected
// gradient method (with Dykstra projection) for small QPs.
#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <functional>
#include <random>

#include "tankmpc/qp_solver.hpp"

namespace oracles {

inline double simpson(const std::function<double(double)>& f, double a, double b,
                      int intervals) {
  if (intervals % 2 != 0) ++intervals;
  const double h = (b - a) / intervals;
  double sum = f(a) + f(b);
  for (int i = 1; i < intervals; ++i) {
    sum += f(a + i * h) * (i % 2 == 1 ? 4.0 : 2.0);
  }
  return sum * h / 3.0;
}

inline double central_diff(const std::function<double(double)>& f, double x, double step) {
  return (f(x + step) - f(x - step)) / (2.0 * step);
}

// Exact projection onto {G z <= g} intersected with box bounds via Dykstra's
// alternating projections; every elementary projection is closed-form.
inline Eigen::VectorXd project_feasible(const tankmpc::QuadProgram& qp,
                                        const Eigen::VectorXd& point) {
  const Eigen::Index n = qp.num_variables();
  const Eigen::Index m = qp.num_inequalities();
  const Eigen::Index sets = m + 1;  // each halfspace plus the whole box
  Eigen::VectorXd z = point;
  Eigen::MatrixXd corrections = Eigen::MatrixXd::Zero(n, sets);
  for (int sweep = 0; sweep < 2000; ++sweep) {
    double moved = 0.0;
    for (Eigen::Index s = 0; s < sets; ++s) {
      const Eigen::VectorXd y = z - corrections.col(s);
      Eigen::VectorXd projected = y;
      if (s < m) {
        const Eigen::VectorXd normal = qp.ineq_matrix.row(s).transpose();
        const double violation = normal.dot(y) - qp.ineq_bound(s);
        if (violation > 0.0) projected = y - violation / normal.squaredNorm() * normal;
      } else {
        projected = y.cwiseMax(qp.lower).cwiseMin(qp.upper);
      }
      corrections.col(s) = projected - y;
      moved = std::max(moved, (projected - z).cwiseAbs().maxCoeff());
      z = projected;
    }
    if (moved < 1e-15) break;
  }
  return z;
}

// Projected gradient with a 1/L step, run to a tight fixed point. Slow and
// simple by design; used as the ground truth for random strictly convex QPs.
inline Eigen::VectorXd projected_gradient_qp(const tankmpc::QuadProgram& qp,
                                             int max_iterations = 200000) {
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eigs(qp.hessian);
  const double step = 1.0 / eigs.eigenvalues().maxCoeff();
  Eigen::VectorXd z = project_feasible(qp, Eigen::VectorXd::Zero(qp.num_variables()));
  for (int i = 0; i < max_iterations; ++i) {
    const Eigen::VectorXd next =
        project_feasible(qp, z - step * (qp.hessian * z + qp.gradient));
    const double moved = (next - z).cwiseAbs().maxCoeff();
    z = next;
    if (moved < 1e-13) break;
  }
  return z;
}

// Random strictly convex instance with a guaranteed-feasible constraint set:
// bounds are placed around a random interior point.
inline tankmpc::QuadProgram random_qp(std::mt19937_64& rng, int n, int m) {
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  std::uniform_real_distribution<double> positive(0.05, 1.0);
  tankmpc::QuadProgram qp;
  Eigen::MatrixXd factor(n, n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) factor(i, j) = unit(rng);
  }
  qp.hessian = factor.transpose() * factor + Eigen::MatrixXd::Identity(n, n);
  qp.gradient.resize(n);
  for (int i = 0; i < n; ++i) qp.gradient(i) = 2.0 * unit(rng);

  Eigen::VectorXd interior(n);
  for (int i = 0; i < n; ++i) interior(i) = unit(rng);
  qp.lower.resize(n);
  qp.upper.resize(n);
  for (int i = 0; i < n; ++i) {
    qp.lower(i) = interior(i) - positive(rng);
    qp.upper(i) = interior(i) + positive(rng);
  }
  qp.ineq_matrix.resize(m, n);
  qp.ineq_bound.resize(m);
  for (int r = 0; r < m; ++r) {
    for (int j = 0; j < n; ++j) qp.ineq_matrix(r, j) = unit(rng);
    qp.ineq_bound(r) = qp.ineq_matrix.row(r).dot(interior) + positive(rng);
  }
  return qp;
}

}  // namespace oracles
