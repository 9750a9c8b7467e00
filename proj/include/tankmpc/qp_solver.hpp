#pragma once

#include <Eigen/Dense>
#include <optional>

namespace tankmpc {

/// Strictly convex quadratic program
///   min 1/2 z'Hz + f'z   s.t.  G z <= g,  lower <= z <= upper.
/// Box bounds may be +-infinity. H must be symmetric positive definite.
struct QuadProgram {
  Eigen::MatrixXd hessian;      // H, n x n
  Eigen::VectorXd gradient;     // f, n
  Eigen::MatrixXd ineq_matrix;  // G, m x n (m may be 0)
  Eigen::VectorXd ineq_bound;   // g, m
  Eigen::VectorXd lower;        // n, -inf allowed
  Eigen::VectorXd upper;        // n, +inf allowed

  Eigen::Index num_variables() const { return hessian.rows(); }
  Eigen::Index num_inequalities() const { return ineq_matrix.rows(); }

  /// Dimension consistency and symmetry checks; throws std::invalid_argument.
  void validate() const;
};

enum class QpStatus { optimal, infeasible, iteration_limit };

struct QpSolution {
  Eigen::VectorXd z;
  Eigen::VectorXd ineq_multipliers;   // m, >= 0 at optimum
  Eigen::VectorXd lower_multipliers;  // n
  Eigen::VectorXd upper_multipliers;  // n
  double objective = 0.0;
  QpStatus status = QpStatus::iteration_limit;
  int iterations = 0;
  double kkt_residual = 0.0;
};

struct QpOptions {
  double tol = 1e-8;
  int max_iterations = 500;
};

/// Dual active-set solve (Goldfarb-Idnani scheme with dense refactorization,
/// sized for the small condensed programs produced by the controllers).
/// Starts from the unconstrained minimum and adds violated constraints until
/// primal feasible; every intermediate point is optimal for its working set,
/// so the objective is non-decreasing across iterations. The warm start only
/// influences the order in which violated constraints are examined; the
/// returned point is independent of it.
QpSolution solve_qp(const QuadProgram& problem,
                    const std::optional<Eigen::VectorXd>& warm_start = std::nullopt,
                    const QpOptions& options = {});

/// Max of stationarity, primal feasibility, dual feasibility and
/// complementarity residuals of (problem, solution). Pure diagnostic.
double check_kkt(const QuadProgram& problem, const QpSolution& solution);

}  // namespace tankmpc
