#pragma once

#include <span>
#include <vector>

#include <Eigen/Dense>

#include "tankmpc/qp_solver.hpp"
#include "tankmpc/tank_model.hpp"

namespace tankmpc {

struct SqpSettings {
  int max_iterations = 50;
  double kkt_tol = 1e-8;
  double merit_penalty = 1.0;     // initial l1 penalty, adapted upward
  double armijo_c = 1e-4;
  double backtrack_factor = 0.5;
  int max_backtracks = 40;
};

/// Receding-horizon problem definition shared by both controllers.
struct OcpConfig {
  int horizon = 10;                 // N
  double weight_tracking = 1.0;     // Q_x, on squared level error
  double weight_increment = 10.0;   // Q_u, on squared input increments
  double level_min = 0.01;          // optimizer-side floor, keeps sqrt'(h) finite
  double level_max = 2.0;
  double flow_min = 0.0;
  double flow_max = 0.1;
  double rate_min = -0.02;          // per-step input increment bounds
  double rate_max = 0.02;
  double soft_level_penalty = 1e4;  // quadratic slack weight on level bounds
  SqpSettings sqp;

  void validate() const;
};

/// One solve of the finite-horizon problem: current state, last applied
/// input and the reference over the horizon (r_k previews the level wanted
/// at the end of stage k).
struct OcpInstance {
  OcpConfig config;
  TankParams params;
  double initial_level = 0.0;    // x_0, physical measurement in [0, h_max]
  double previous_input = 0.0;   // u_{-1}
  std::vector<double> reference; // r_0 .. r_{N-1}

  void validate() const;
};

enum class SolveStatus { optimal, iteration_limit, failed };

struct SqpIterationRecord {
  double merit_before = 0.0;
  double merit_after = 0.0;
  double penalty = 0.0;
  double step_length = 0.0;
  double kkt_residual = 0.0;
  int qp_iterations = 0;
};

struct OcpSolution {
  std::vector<double> inputs;  // u_0 .. u_{N-1}, hard-feasible
  std::vector<double> levels;  // x_1 .. x_N
  std::vector<double> slacks;  // level-bound slack per stage
  double cost = 0.0;           // tracking + increment + slack penalty
  int sqp_iterations = 0;
  double kkt_residual = 0.0;
  SolveStatus status = SolveStatus::failed;
  std::vector<SqpIterationRecord> history;
};

/// Chained Euler prediction x_{k+1} = x_k + T_s * rhs(x_k, u_k).
std::vector<double> rollout(const TankParams& params, double initial_level,
                            std::span<const double> inputs);

/// Clamp an input into the flow box and the rate corridor around the
/// previous input, nudging by ulps so that the floating-point increment
/// (input - previous_input) itself satisfies the rate bounds exactly.
double clamp_to_input_corridor(const OcpConfig& config, double previous_input, double input);

/// Stage cost sum_k Q_x (x_{k+1} - r_k)^2 + Q_u (u_k - u_{k-1})^2 with
/// u_{-1} taken from the instance. `levels` holds x_1 .. x_N.
double ocp_cost(const OcpInstance& instance, std::span<const double> inputs,
                std::span<const double> levels);

/// Quantities of one linearization point of the transcribed problem, used by
/// the SQP iteration and exposed for derivative checks.
struct OcpLinearization {
  Eigen::VectorXd dynamics_residual;  // c_k = x_{k+1} - x_k - T_s f(x_k, u_k)
  Eigen::VectorXd state_coeff;        // 1 + T_s df/dh at stages 1..N-1 (index k)
  Eigen::VectorXd input_coeff;        // T_s df/dq at stages 0..N-1
  Eigen::VectorXd cost_grad_inputs;
  Eigen::VectorXd cost_grad_levels;   // w.r.t. x_1 .. x_N
};

/// Residuals, constraint coefficients and cost gradient at (inputs, levels).
/// Levels must stay strictly positive so the Jacobian exists.
OcpLinearization linearize_ocp(const OcpInstance& instance,
                               std::span<const double> inputs,
                               std::span<const double> levels);

/// Sequential quadratic programming over the simultaneous decision vector
/// (inputs, predicted levels, level slacks). Dynamics enter as linearized
/// equality constraints condensed into each QP; input and rate bounds are
/// hard, level bounds carry a quadratic slack penalty. Globalized by an
/// Armijo backtracking line search on an l1 merit function.
OcpSolution sqp_solve(const OcpInstance& instance,
                      const OcpSolution* initial_guess = nullptr);

}  // namespace tankmpc
