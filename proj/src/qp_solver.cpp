#include "tankmpc/qp_solver.hpp"

#include <algorithm>
#include <cassert>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <vector>

namespace tankmpc {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Row-form constraint n'z <= b, remembering where it came from so that
// multipliers can be mapped back to the caller's structure.
enum class RowKind { general, lower, upper };

struct Row {
  Eigen::VectorXd normal;
  double bound = 0.0;
  RowKind kind = RowKind::general;
  Eigen::Index source = 0;
};

std::vector<Row> collect_rows(const QuadProgram& p) {
  const Eigen::Index n = p.num_variables();
  std::vector<Row> rows;
  rows.reserve(static_cast<std::size_t>(p.num_inequalities() + 2 * n));
  for (Eigen::Index i = 0; i < p.num_inequalities(); ++i) {
    rows.push_back({p.ineq_matrix.row(i).transpose(), p.ineq_bound(i), RowKind::general, i});
  }
  for (Eigen::Index i = 0; i < n; ++i) {
    if (std::isfinite(p.lower(i))) {
      Eigen::VectorXd normal = Eigen::VectorXd::Zero(n);
      normal(i) = -1.0;
      rows.push_back({std::move(normal), -p.lower(i), RowKind::lower, i});
    }
    if (std::isfinite(p.upper(i))) {
      Eigen::VectorXd normal = Eigen::VectorXd::Zero(n);
      normal(i) = 1.0;
      rows.push_back({std::move(normal), p.upper(i), RowKind::upper, i});
    }
  }
  return rows;
}

double objective_value(const QuadProgram& p, const Eigen::VectorXd& z) {
  return 0.5 * z.dot(p.hessian * z) + p.gradient.dot(z);
}

}  // namespace

void QuadProgram::validate() const {
  const Eigen::Index n = num_variables();
  if (hessian.cols() != n || gradient.size() != n || lower.size() != n || upper.size() != n) {
    throw std::invalid_argument("QuadProgram: inconsistent dimensions");
  }
  if (ineq_matrix.rows() != ineq_bound.size() ||
      (ineq_matrix.rows() > 0 && ineq_matrix.cols() != n)) {
    throw std::invalid_argument("QuadProgram: inconsistent inequality dimensions");
  }
  const double scale = std::max(1.0, hessian.cwiseAbs().maxCoeff());
  if ((hessian - hessian.transpose()).cwiseAbs().maxCoeff() > 1e-12 * scale) {
    throw std::invalid_argument("QuadProgram: Hessian is not symmetric");
  }
  for (Eigen::Index i = 0; i < n; ++i) {
    if (lower(i) > upper(i)) {
      throw std::invalid_argument("QuadProgram: crossed box bounds");
    }
  }
}

QpSolution solve_qp(const QuadProgram& problem,
                    const std::optional<Eigen::VectorXd>& warm_start,
                    const QpOptions& options) {
  problem.validate();
  if (!(options.tol > 0.0)) {
    throw std::invalid_argument("solve_qp: tol must be positive");
  }
  const Eigen::Index n = problem.num_variables();

  Eigen::LLT<Eigen::MatrixXd> llt(problem.hessian);
  if (llt.info() != Eigen::Success) {
    throw std::invalid_argument("solve_qp: Hessian is not positive definite");
  }

  const std::vector<Row> rows = collect_rows(problem);
  const auto total = static_cast<Eigen::Index>(rows.size());

  QpSolution sol;
  sol.z = llt.solve(-problem.gradient);
  sol.ineq_multipliers = Eigen::VectorXd::Zero(problem.num_inequalities());
  sol.lower_multipliers = Eigen::VectorXd::Zero(n);
  sol.upper_multipliers = Eigen::VectorXd::Zero(n);

  std::vector<Eigen::Index> active;       // indices into rows
  std::vector<double> active_multiplier;  // same length as active

  // H^{-1} applied to each row normal, cached once.
  Eigen::MatrixXd hinv_normals(n, total);
  for (Eigen::Index i = 0; i < total; ++i) {
    hinv_normals.col(i) = llt.solve(rows[static_cast<std::size_t>(i)].normal);
  }

  // Scan order for the first violated-constraint pick; a warm start promotes
  // the constraints it activates, which can shorten the active-set path.
  std::vector<Eigen::Index> scan(static_cast<std::size_t>(total));
  std::iota(scan.begin(), scan.end(), 0);
  if (warm_start && warm_start->size() == n) {
    std::stable_sort(scan.begin(), scan.end(), [&](Eigen::Index a, Eigen::Index b) {
      const auto& ra = rows[static_cast<std::size_t>(a)];
      const auto& rb = rows[static_cast<std::size_t>(b)];
      return ra.normal.dot(*warm_start) - ra.bound > rb.normal.dot(*warm_start) - rb.bound;
    });
  }

#ifndef NDEBUG
  double last_objective = objective_value(problem, sol.z);
#endif

  int iterations = 0;
  bool first_pick = true;
  bool done = false;
  while (!done) {
    // Most violated inactive constraint.
    Eigen::Index pick = -1;
    double worst = options.tol;
    for (Eigen::Index s = 0; s < total; ++s) {
      const Eigen::Index i = first_pick ? scan[static_cast<std::size_t>(s)] : s;
      if (std::find(active.begin(), active.end(), i) != active.end()) continue;
      const auto& row = rows[static_cast<std::size_t>(i)];
      const double violation = row.normal.dot(sol.z) - row.bound;
      if (violation > worst) {
        worst = violation;
        pick = i;
      }
    }
    first_pick = false;
    if (pick < 0) {
      sol.status = QpStatus::optimal;
      break;
    }

    const auto& row_p = rows[static_cast<std::size_t>(pick)];
    double violation = worst;
    double pick_multiplier = 0.0;

    // Inner loop: grow the multiplier of `pick`, dropping dual-blocking
    // constraints, until the violated constraint can join the working set.
    while (true) {
      if (iterations >= options.max_iterations) {
        sol.status = QpStatus::iteration_limit;
        done = true;
        break;
      }
      ++iterations;

      const auto na = static_cast<Eigen::Index>(active.size());
      Eigen::VectorXd r(na);
      Eigen::VectorXd dz;
      if (na > 0) {
        Eigen::MatrixXd normals(n, na);
        Eigen::MatrixXd hinv_active(n, na);
        for (Eigen::Index k = 0; k < na; ++k) {
          const auto idx = static_cast<std::size_t>(active[static_cast<std::size_t>(k)]);
          normals.col(k) = rows[idx].normal;
          hinv_active.col(k) = hinv_normals.col(active[static_cast<std::size_t>(k)]);
        }
        const Eigen::MatrixXd schur = normals.transpose() * hinv_active;
        r = Eigen::LDLT<Eigen::MatrixXd>(schur).solve(normals.transpose() *
                                                      hinv_normals.col(pick));
        dz = -(hinv_normals.col(pick) - hinv_active * r);
      } else {
        dz = -hinv_normals.col(pick);
      }

      // Direction curvature in the H^{-1} metric; zero iff the picked normal
      // is dependent on the working set (pure dual step).
      const double curvature = -row_p.normal.dot(dz);
      const bool primal_move = curvature > 1e-14;
      const double step_full = primal_move ? violation / curvature : kInf;

      double step_dual = kInf;
      Eigen::Index blocking = -1;
      for (Eigen::Index k = 0; k < na; ++k) {
        if (r(k) > 1e-14) {
          const double ratio = active_multiplier[static_cast<std::size_t>(k)] / r(k);
          if (ratio < step_dual) {
            step_dual = ratio;
            blocking = k;
          }
        }
      }

      const double step = std::min(step_full, step_dual);
      if (!std::isfinite(step)) {
        sol.status = QpStatus::infeasible;
        sol.iterations = iterations;
        sol.objective = objective_value(problem, sol.z);
        sol.kkt_residual = check_kkt(problem, sol);
        return sol;
      }

      if (primal_move) {
        sol.z += step * dz;
        violation = row_p.normal.dot(sol.z) - row_p.bound;
      }
      for (Eigen::Index k = 0; k < na; ++k) {
        active_multiplier[static_cast<std::size_t>(k)] -= step * r(k);
      }
      pick_multiplier += step;

      if (step == step_full) {
        active.push_back(pick);
        active_multiplier.push_back(pick_multiplier);
        break;
      }
      // Dual step hit zero first: drop the blocking constraint and retry.
      active.erase(active.begin() + blocking);
      active_multiplier.erase(active_multiplier.begin() + blocking);
    }

#ifndef NDEBUG
    const double objective_now = objective_value(problem, sol.z);
    assert(objective_now >= last_objective - 1e-9 * std::max(1.0, std::abs(last_objective)));
    last_objective = objective_now;
#endif
  }

  for (std::size_t k = 0; k < active.size(); ++k) {
    const auto& row = rows[static_cast<std::size_t>(active[k])];
    const double mult = std::max(0.0, active_multiplier[k]);
    switch (row.kind) {
      case RowKind::general: sol.ineq_multipliers(row.source) = mult; break;
      case RowKind::lower: sol.lower_multipliers(row.source) = mult; break;
      case RowKind::upper: sol.upper_multipliers(row.source) = mult; break;
    }
  }
  sol.iterations = iterations;
  sol.objective = objective_value(problem, sol.z);
  sol.kkt_residual = check_kkt(problem, sol);
  if (sol.status == QpStatus::optimal && sol.kkt_residual > options.tol) {
    sol.status = QpStatus::iteration_limit;
  }
  return sol;
}

double check_kkt(const QuadProgram& problem, const QpSolution& solution) {
  const Eigen::Index n = problem.num_variables();
  const Eigen::Index m = problem.num_inequalities();
  const Eigen::VectorXd& z = solution.z;

  Eigen::VectorXd stationarity = problem.hessian * z + problem.gradient;
  if (m > 0) {
    stationarity += problem.ineq_matrix.transpose() * solution.ineq_multipliers;
  }
  stationarity -= solution.lower_multipliers;
  stationarity += solution.upper_multipliers;
  double residual = stationarity.cwiseAbs().maxCoeff();

  double primal = 0.0;
  double dual = 0.0;
  double complementarity = 0.0;
  for (Eigen::Index i = 0; i < m; ++i) {
    const double slack = problem.ineq_matrix.row(i).dot(z) - problem.ineq_bound(i);
    primal = std::max(primal, slack);
    dual = std::max(dual, -solution.ineq_multipliers(i));
    complementarity = std::max(complementarity, std::abs(solution.ineq_multipliers(i) * slack));
  }
  for (Eigen::Index i = 0; i < n; ++i) {
    if (std::isfinite(problem.lower(i))) {
      const double slack = problem.lower(i) - z(i);
      primal = std::max(primal, slack);
      dual = std::max(dual, -solution.lower_multipliers(i));
      complementarity =
          std::max(complementarity, std::abs(solution.lower_multipliers(i) * slack));
    }
    if (std::isfinite(problem.upper(i))) {
      const double slack = z(i) - problem.upper(i);
      primal = std::max(primal, slack);
      dual = std::max(dual, -solution.upper_multipliers(i));
      complementarity =
          std::max(complementarity, std::abs(solution.upper_multipliers(i) * slack));
    }
  }
  return std::max({residual, primal, dual, complementarity});
}

}  // namespace tankmpc
