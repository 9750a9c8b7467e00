#include "tankmpc/controllers.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace tankmpc {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kActivityTol = 1e-7;

double clamp(double v, double lo, double hi) { return std::min(std::max(v, lo), hi); }

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

void check_step_input(const OcpConfig& config, const ControlStepInput& input) {
  if (static_cast<int>(input.reference_preview.size()) != config.horizon) {
    throw std::invalid_argument("control step: reference preview length must equal horizon");
  }
}

unsigned activity_flags(const OcpConfig& cfg, double previous_input,
                        const std::vector<double>& inputs, const std::vector<double>& levels) {
  unsigned flags = 0;
  double prev = previous_input;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    const double u = inputs[k];
    if (u - cfg.flow_min <= kActivityTol) flags |= kActiveInputLow;
    if (cfg.flow_max - u <= kActivityTol) flags |= kActiveInputHigh;
    const double du = u - prev;
    if (du - cfg.rate_min <= kActivityTol) flags |= kActiveRateLow;
    if (cfg.rate_max - du <= kActivityTol) flags |= kActiveRateHigh;
    prev = u;
  }
  for (double x : levels) {
    if (x - cfg.level_min <= kActivityTol) flags |= kActiveLevelLow;
    if (cfg.level_max - x <= kActivityTol) flags |= kActiveLevelHigh;
  }
  return flags;
}

}  // namespace

EstimatorState estimator_update(const EstimatorState& state, double measured_level,
                                double model_prediction) {
  if (!(state.gain >= 0.0) || !(state.gain <= 1.0)) {
    throw std::invalid_argument("estimator_update: gain must lie in [0, 1]");
  }
  EstimatorState next = state;
  next.disturbance =
      state.disturbance + state.gain * (measured_level - model_prediction - state.disturbance);
  next.disturbance = clamp(next.disturbance, -state.clamp_abs, state.clamp_abs);
  return next;
}

QuadProgram lmpc_build_qp(const LinearTankModel& model, const OcpConfig& config,
                          const ControlStepInput& step, double previous_input,
                          double disturbance_estimate) {
  check_step_input(config, step);
  const int horizon = config.horizon;
  const double level_op = model.operating_point.level;
  const double inflow_op = model.operating_point.inflow;
  const double a = model.a_disc;
  const double b = model.b_disc;

  // Deviation coordinates, measurement and reference both corrected by the
  // output-disturbance estimate.
  const double x0 = (step.measured_level - disturbance_estimate) - level_op;
  const double u_prev = previous_input - inflow_op;

  // Prediction x_{k+1} = predict_free(k) + predict_forced.row(k) * u.
  Eigen::VectorXd predict_free(horizon);
  Eigen::MatrixXd predict_forced = Eigen::MatrixXd::Zero(horizon, horizon);
  double free_run = x0;
  for (int k = 0; k < horizon; ++k) {
    free_run *= a;
    predict_free(k) = free_run;
    predict_forced(k, k) = b;
    if (k > 0) predict_forced.row(k).head(k) = a * predict_forced.row(k - 1).head(k);
  }

  Eigen::VectorXd ref(horizon);
  for (int k = 0; k < horizon; ++k) {
    ref(k) = (step.reference_preview[static_cast<std::size_t>(k)] - disturbance_estimate) -
             level_op;
  }

  Eigen::MatrixXd diff = Eigen::MatrixXd::Identity(horizon, horizon);
  for (int k = 1; k < horizon; ++k) diff(k, k - 1) = -1.0;
  Eigen::VectorXd increment_shift = Eigen::VectorXd::Zero(horizon);
  increment_shift(0) = -u_prev;

  const int n = 2 * horizon;
  QuadProgram qp;
  qp.hessian = Eigen::MatrixXd::Zero(n, n);
  qp.gradient = Eigen::VectorXd::Zero(n);
  qp.hessian.topLeftCorner(horizon, horizon) =
      2.0 * (config.weight_tracking * predict_forced.transpose() * predict_forced +
             config.weight_increment * diff.transpose() * diff);
  qp.hessian.bottomRightCorner(horizon, horizon) =
      2.0 * config.soft_level_penalty * Eigen::MatrixXd::Identity(horizon, horizon);
  qp.gradient.head(horizon) =
      2.0 * (config.weight_tracking * predict_forced.transpose() * (predict_free - ref) +
             config.weight_increment * diff.transpose() * increment_shift);

  const int m = 4 * horizon;
  qp.ineq_matrix = Eigen::MatrixXd::Zero(m, n);
  qp.ineq_bound = Eigen::VectorXd::Zero(m);
  qp.ineq_matrix.topLeftCorner(horizon, horizon) = diff;
  qp.ineq_bound.head(horizon) =
      Eigen::VectorXd::Constant(horizon, config.rate_max) - increment_shift;
  qp.ineq_matrix.block(horizon, 0, horizon, horizon) = -diff;
  qp.ineq_bound.segment(horizon, horizon) =
      increment_shift - Eigen::VectorXd::Constant(horizon, config.rate_min);
  for (int k = 0; k < horizon; ++k) {
    qp.ineq_matrix.block(2 * horizon + k, 0, 1, horizon) = predict_forced.row(k);
    qp.ineq_matrix(2 * horizon + k, horizon + k) = -1.0;
    qp.ineq_bound(2 * horizon + k) = (config.level_max - level_op) - predict_free(k);
    qp.ineq_matrix.block(3 * horizon + k, 0, 1, horizon) = -predict_forced.row(k);
    qp.ineq_matrix(3 * horizon + k, horizon + k) = -1.0;
    qp.ineq_bound(3 * horizon + k) = predict_free(k) - (config.level_min - level_op);
  }
  qp.lower.resize(n);
  qp.upper.resize(n);
  qp.lower.head(horizon) = Eigen::VectorXd::Constant(horizon, config.flow_min - inflow_op);
  qp.upper.head(horizon) = Eigen::VectorXd::Constant(horizon, config.flow_max - inflow_op);
  qp.lower.tail(horizon) = Eigen::VectorXd::Zero(horizon);
  qp.upper.tail(horizon) = Eigen::VectorXd::Constant(horizon, kInf);
  return qp;
}

LmpcController::LmpcController(const TankParams& params, const OcpConfig& config,
                               double linearization_level, double estimator_gain,
                               double initial_input)
    : params_(params), config_(config) {
  params_.validate();
  config_.validate();
  model_ = linearize(params_, operating_point_at(params_, linearization_level));
  estimator_.gain = estimator_gain;
  estimator_.clamp_abs = params_.geometry.max_height;
  previous_input_ = initial_input;
}

ControlResult LmpcController::step(const ControlStepInput& input) {
  const auto start = std::chrono::steady_clock::now();
  check_step_input(config_, input);
  const int horizon = config_.horizon;
  const double measured = clamp(input.measured_level, 0.0, params_.geometry.max_height);

  if (estimator_.has_prediction) {
    estimator_ = estimator_update(estimator_, measured, estimator_.last_model_prediction);
  }
  const double d_hat = estimator_.disturbance;

  ControlStepInput corrected = input;
  corrected.measured_level = measured;
  const QuadProgram qp = lmpc_build_qp(model_, config_, corrected, previous_input_, d_hat);
  QpOptions options;
  options.tol = std::min(1e-9, config_.sqp.kkt_tol);
  const QpSolution qp_sol = solve_qp(qp, warm_start_, options);

  ControlResult result;
  result.diagnostics.iterations = qp_sol.iterations;
  result.diagnostics.kkt_residual = qp_sol.kkt_residual;
  result.diagnostics.disturbance = d_hat;

  if (qp_sol.status != QpStatus::optimal) {
    result.diagnostics.solver_failure = true;
    result.diagnostics.fallback_hold = true;
    result.input = clamp(previous_input_, config_.flow_min, config_.flow_max);
  } else {
    result.input = clamp_to_input_corridor(config_, previous_input_,
                                           model_.operating_point.inflow + qp_sol.z(0));

    // Objective value in absolute terms for the trace, same composition as
    // the nonlinear controller's cost report.
    std::vector<double> inputs(static_cast<std::size_t>(horizon));
    std::vector<double> levels(static_cast<std::size_t>(horizon));
    double prev_u = previous_input_;
    double cost = 0.0;
    double x = (measured - d_hat) - model_.operating_point.level;
    for (int k = 0; k < horizon; ++k) {
      const double u_dev = qp_sol.z(k);
      x = model_.a_disc * x + model_.b_disc * u_dev;
      const double u_abs = model_.operating_point.inflow + u_dev;
      const double level_abs = model_.operating_point.level + x;
      inputs[static_cast<std::size_t>(k)] = u_abs;
      levels[static_cast<std::size_t>(k)] = level_abs;
      const double track =
          level_abs - (input.reference_preview[static_cast<std::size_t>(k)] - d_hat);
      cost += config_.weight_tracking * track * track +
              config_.weight_increment * (u_abs - prev_u) * (u_abs - prev_u);
      prev_u = u_abs;
    }
    cost += config_.soft_level_penalty * qp_sol.z.tail(horizon).squaredNorm();
    result.diagnostics.cost = cost;
    result.diagnostics.active_constraints =
        activity_flags(config_, previous_input_, inputs, levels);

    Eigen::VectorXd shifted(2 * horizon);
    shifted.head(horizon - 1) = qp_sol.z.segment(1, horizon - 1);
    shifted(horizon - 1) = qp_sol.z(horizon - 1);
    shifted.segment(horizon, horizon - 1) = qp_sol.z.segment(horizon + 1, horizon - 1);
    shifted(2 * horizon - 1) = qp_sol.z(2 * horizon - 1);
    warm_start_ = shifted;
  }

  const double x0 = (measured - d_hat) - model_.operating_point.level;
  estimator_.last_model_prediction =
      model_.operating_point.level + model_.a_disc * x0 +
      model_.b_disc * (result.input - model_.operating_point.inflow);
  estimator_.has_prediction = true;

  previous_input_ = result.input;
  result.diagnostics.solve_time = seconds_since(start);
  return result;
}

NmpcController::NmpcController(const TankParams& params, const OcpConfig& config,
                               double estimator_gain, double initial_input)
    : params_(params), config_(config) {
  params_.validate();
  config_.validate();
  estimator_.gain = estimator_gain;
  estimator_.clamp_abs = params_.geometry.max_height;
  previous_input_ = initial_input;
}

ControlResult NmpcController::step(const ControlStepInput& input) {
  const auto start = std::chrono::steady_clock::now();
  check_step_input(config_, input);
  const double h_max = params_.geometry.max_height;
  const double measured = clamp(input.measured_level, 0.0, h_max);

  if (estimator_.has_prediction) {
    estimator_ = estimator_update(estimator_, measured, estimator_.last_model_prediction);
  }
  const double d_hat = estimator_.disturbance;

  OcpInstance instance;
  instance.config = config_;
  instance.params = params_;
  instance.initial_level = clamp(measured - d_hat, 0.0, h_max);
  instance.previous_input = clamp(previous_input_, config_.flow_min, config_.flow_max);
  instance.reference.resize(input.reference_preview.size());
  for (std::size_t k = 0; k < input.reference_preview.size(); ++k) {
    instance.reference[k] =
        clamp(input.reference_preview[k] - d_hat, config_.level_min, config_.level_max);
  }

  const OcpSolution solution =
      sqp_solve(instance, warm_start_ ? &*warm_start_ : nullptr);

  ControlResult result;
  result.diagnostics.iterations = solution.sqp_iterations;
  result.diagnostics.kkt_residual = solution.kkt_residual;
  result.diagnostics.cost = solution.cost;
  result.diagnostics.disturbance = d_hat;

  if (solution.status == SolveStatus::failed) {
    result.diagnostics.solver_failure = true;
    result.diagnostics.fallback_hold = true;
    result.input = clamp(previous_input_, config_.flow_min, config_.flow_max);
    warm_start_.reset();
  } else {
    result.input = solution.inputs.front();
    result.diagnostics.active_constraints =
        activity_flags(config_, instance.previous_input, solution.inputs, solution.levels);
    OcpSolution shifted = solution;
    shifted.inputs.erase(shifted.inputs.begin());
    shifted.inputs.push_back(shifted.inputs.back());
    warm_start_ = std::move(shifted);
  }

  const double rhs = dynamics_rhs(params_, instance.initial_level, result.input);
  estimator_.last_model_prediction =
      clamp(instance.initial_level + params_.sample_time * rhs, 0.0, h_max);
  estimator_.has_prediction = true;

  previous_input_ = result.input;
  result.diagnostics.solve_time = seconds_since(start);
  return result;
}

}  // namespace tankmpc
