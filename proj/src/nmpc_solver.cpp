#include "tankmpc/nmpc_solver.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace tankmpc {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
// Iterates are kept above this floor: the sqrt-derivative singularity at the
// empty tank makes the linearized dynamics blow up as the level approaches
// zero, which would poison the condensed Hessian.
constexpr double kLevelFloor = 1e-4;

double clamp(double v, double lo, double hi) { return std::min(std::max(v, lo), hi); }

struct Iterate {
  Eigen::VectorXd inputs;
  Eigen::VectorXd levels;  // x_1 .. x_N
  Eigen::VectorXd slacks;
};

double slack_needed(const OcpConfig& config, double level) {
  return std::max({0.0, config.level_min - level, level - config.level_max});
}

// Objective actually minimized: stage cost plus the quadratic slack penalty.
double full_cost(const OcpInstance& instance, const Iterate& it) {
  double cost = ocp_cost(instance, {it.inputs.data(), static_cast<std::size_t>(it.inputs.size())},
                         {it.levels.data(), static_cast<std::size_t>(it.levels.size())});
  cost += instance.config.soft_level_penalty * it.slacks.squaredNorm();
  return cost;
}

// l1 merit; +inf when the trial point leaves the model domain.
double merit_value(const OcpInstance& instance, const Iterate& it, double penalty) {
  const int horizon = instance.config.horizon;
  const double t_s = instance.params.sample_time;
  double residual_l1 = 0.0;
  double prev = instance.initial_level;
  for (int k = 0; k < horizon; ++k) {
    const double level = it.levels(k);
    if (!(level > kLevelFloor) || !(level <= instance.params.geometry.max_height)) {
      return kInf;
    }
    const double rhs = dynamics_rhs(instance.params, prev, it.inputs(k));
    residual_l1 += std::abs(level - prev - t_s * rhs);
    prev = level;
  }
  return full_cost(instance, it) + penalty * residual_l1;
}

Eigen::VectorXd increments(const Eigen::VectorXd& inputs, double previous_input) {
  Eigen::VectorXd delta(inputs.size());
  double prev = previous_input;
  for (Eigen::Index k = 0; k < inputs.size(); ++k) {
    delta(k) = inputs(k) - prev;
    prev = inputs(k);
  }
  return delta;
}

// Clamp inputs into the hard box and rate corridor; the QP already enforces
// both, this removes the last-ulp rounding so feasibility checks can be exact.
void project_hard_bounds(const OcpConfig& config, double previous_input,
                         Eigen::VectorXd& inputs) {
  double prev = previous_input;
  for (Eigen::Index k = 0; k < inputs.size(); ++k) {
    inputs(k) = clamp_to_input_corridor(config, prev, inputs(k));
    prev = inputs(k);
  }
}

Iterate build_initial_iterate(const OcpInstance& instance, const OcpSolution* guess) {
  const int horizon = instance.config.horizon;
  Iterate it;
  it.inputs = Eigen::VectorXd::Constant(horizon, instance.previous_input);
  if (guess && static_cast<int>(guess->inputs.size()) == horizon) {
    for (int k = 0; k < horizon; ++k) it.inputs(k) = guess->inputs[static_cast<std::size_t>(k)];
  }
  project_hard_bounds(instance.config, instance.previous_input, it.inputs);

  // Guarded rollout: clamped into the model domain so the first
  // linearization always exists; the dynamics residual absorbs the clamps.
  // The floor sits at the soft level bound where the guess is well behaved.
  it.levels.resize(horizon);
  it.slacks.resize(horizon);
  const double h_max = instance.params.geometry.max_height;
  const double guess_floor = std::max(instance.config.level_min, 1e-3);
  double level = instance.initial_level;
  for (int k = 0; k < horizon; ++k) {
    const double from = clamp(level, 0.0, h_max);
    double next = from + instance.params.sample_time *
                             dynamics_rhs(instance.params, from, it.inputs(k));
    next = clamp(next, guess_floor, h_max);
    it.levels(k) = next;
    it.slacks(k) = slack_needed(instance.config, next);
    level = next;
  }
  return it;
}

struct CondensedStep {
  Eigen::MatrixXd state_map;   // E: levels respond to input moves
  Eigen::VectorXd state_shift; // e: residual-driven drift at zero input move
};

CondensedStep condense(const OcpLinearization& lin, int horizon) {
  CondensedStep c;
  c.state_map = Eigen::MatrixXd::Zero(horizon, horizon);
  c.state_shift = Eigen::VectorXd::Zero(horizon);
  c.state_map(0, 0) = lin.input_coeff(0);
  c.state_shift(0) = -lin.dynamics_residual(0);
  for (int k = 1; k < horizon; ++k) {
    c.state_map.row(k) = lin.state_coeff(k) * c.state_map.row(k - 1);
    c.state_map(k, k) = lin.input_coeff(k);
    c.state_shift(k) = lin.state_coeff(k) * c.state_shift(k - 1) - lin.dynamics_residual(k);
  }
  return c;
}

Eigen::MatrixXd difference_matrix(int horizon) {
  Eigen::MatrixXd d = Eigen::MatrixXd::Identity(horizon, horizon);
  for (int k = 1; k < horizon; ++k) d(k, k - 1) = -1.0;
  return d;
}

// Multipliers of the dynamics equalities, recovered from the stationarity of
// the Lagrangian in the level variables (backward adjoint recursion).
Eigen::VectorXd recover_equality_multipliers(const OcpInstance& instance,
                                             const OcpLinearization& lin,
                                             const Iterate& it,
                                             const Eigen::VectorXd& level_hi_mult,
                                             const Eigen::VectorXd& level_lo_mult) {
  const int horizon = instance.config.horizon;
  const double q_x = instance.config.weight_tracking;
  Eigen::VectorXd nu(horizon);
  nu(horizon - 1) = -(2.0 * q_x * (it.levels(horizon - 1) - instance.reference.back()) +
                      level_hi_mult(horizon - 1) - level_lo_mult(horizon - 1));
  for (int j = horizon - 1; j >= 1; --j) {
    nu(j - 1) = nu(j) * lin.state_coeff(j) -
                2.0 * q_x * (it.levels(j - 1) - instance.reference[static_cast<std::size_t>(j - 1)]) -
                level_hi_mult(j - 1) + level_lo_mult(j - 1);
  }
  return nu;
}

struct Multipliers {
  Eigen::VectorXd rate_hi, rate_lo, level_hi, level_lo;
  Eigen::VectorXd input_lo, input_hi, slack_lo;
  Eigen::VectorXd equality;
};

double nlp_kkt_residual(const OcpInstance& instance, const OcpLinearization& lin,
                        const Iterate& it, const Multipliers& m) {
  const OcpConfig& cfg = instance.config;
  const int horizon = cfg.horizon;
  const Eigen::VectorXd delta = increments(it.inputs, instance.previous_input);

  double residual = lin.dynamics_residual.cwiseAbs().maxCoeff();

  for (int k = 0; k < horizon; ++k) {
    double stat = 2.0 * cfg.weight_increment * delta(k) - m.equality(k) * lin.input_coeff(k) +
                  (m.rate_hi(k) - m.rate_lo(k)) + m.input_hi(k) - m.input_lo(k);
    if (k + 1 < horizon) {
      stat -= 2.0 * cfg.weight_increment * delta(k + 1);
      stat -= m.rate_hi(k + 1) - m.rate_lo(k + 1);
    }
    residual = std::max(residual, std::abs(stat));

    const double slack_stat = 2.0 * cfg.soft_level_penalty * it.slacks(k) - m.level_hi(k) -
                              m.level_lo(k) - m.slack_lo(k);
    residual = std::max(residual, std::abs(slack_stat));

    // Dual feasibility and complementarity on the inequality set.
    const double rate_hi_slack = delta(k) - cfg.rate_max;
    const double rate_lo_slack = cfg.rate_min - delta(k);
    const double level_hi_slack = it.levels(k) - it.slacks(k) - cfg.level_max;
    const double level_lo_slack = cfg.level_min - it.levels(k) - it.slacks(k);
    const double in_lo_slack = cfg.flow_min - it.inputs(k);
    const double in_hi_slack = it.inputs(k) - cfg.flow_max;
    for (double v : {rate_hi_slack, rate_lo_slack, level_hi_slack, level_lo_slack, in_lo_slack,
                     in_hi_slack, -it.slacks(k)}) {
      residual = std::max(residual, v);
    }
    for (double v : {m.rate_hi(k), m.rate_lo(k), m.level_hi(k), m.level_lo(k), m.input_lo(k),
                     m.input_hi(k), m.slack_lo(k)}) {
      residual = std::max(residual, -v);
    }
    residual = std::max(residual, std::abs(m.rate_hi(k) * rate_hi_slack));
    residual = std::max(residual, std::abs(m.rate_lo(k) * rate_lo_slack));
    residual = std::max(residual, std::abs(m.level_hi(k) * level_hi_slack));
    residual = std::max(residual, std::abs(m.level_lo(k) * level_lo_slack));
    residual = std::max(residual, std::abs(m.input_lo(k) * in_lo_slack));
    residual = std::max(residual, std::abs(m.input_hi(k) * in_hi_slack));
    residual = std::max(residual, std::abs(m.slack_lo(k) * it.slacks(k)));
  }
  return residual;
}

void finalize(const OcpInstance& instance, Iterate it, OcpSolution& out) {
  const int horizon = instance.config.horizon;
  project_hard_bounds(instance.config, instance.previous_input, it.inputs);
  out.inputs.assign(it.inputs.data(), it.inputs.data() + horizon);
  out.levels.assign(it.levels.data(), it.levels.data() + horizon);
  out.slacks.assign(it.slacks.data(), it.slacks.data() + horizon);
  out.cost = full_cost(instance, it);
}

}  // namespace

void OcpConfig::validate() const {
  if (horizon < 1) throw std::invalid_argument("OcpConfig: horizon must be >= 1");
  if (!(weight_tracking >= 0.0) || !(weight_increment >= 0.0) ||
      !(weight_tracking > 0.0 || weight_increment > 0.0)) {
    throw std::invalid_argument("OcpConfig: need Q_x > 0 or Q_u > 0 and both nonnegative");
  }
  if (!(level_min >= 0.0) || !(level_min < level_max)) {
    throw std::invalid_argument("OcpConfig: level bounds out of order");
  }
  if (!(flow_min < flow_max)) throw std::invalid_argument("OcpConfig: flow bounds out of order");
  if (!(rate_min <= 0.0) || !(rate_max >= 0.0)) {
    throw std::invalid_argument("OcpConfig: rate bounds must straddle zero");
  }
  if (!(soft_level_penalty > 0.0)) {
    throw std::invalid_argument("OcpConfig: soft_level_penalty must be positive");
  }
  if (sqp.max_iterations < 1 || !(sqp.kkt_tol > 0.0)) {
    throw std::invalid_argument("OcpConfig: bad SQP settings");
  }
}

void OcpInstance::validate() const {
  config.validate();
  params.validate();
  if (!(initial_level >= 0.0) || !(initial_level <= params.geometry.max_height)) {
    throw std::invalid_argument("OcpInstance: initial level outside the tank");
  }
  if (!(previous_input >= config.flow_min) || !(previous_input <= config.flow_max)) {
    throw std::invalid_argument("OcpInstance: previous input outside flow bounds");
  }
  if (static_cast<int>(reference.size()) != config.horizon) {
    throw std::invalid_argument("OcpInstance: reference length must equal the horizon");
  }
  for (double r : reference) {
    if (!(r >= config.level_min) || !(r <= config.level_max)) {
      throw std::invalid_argument("OcpInstance: reference outside level bounds");
    }
  }
}

std::vector<double> rollout(const TankParams& params, double initial_level,
                            std::span<const double> inputs) {
  std::vector<double> levels;
  levels.reserve(inputs.size());
  double level = initial_level;
  for (double q : inputs) {
    level = euler_step(params, level, q);
    levels.push_back(level);
  }
  return levels;
}

double clamp_to_input_corridor(const OcpConfig& config, double previous_input, double input) {
  const double lo = std::max(config.flow_min, previous_input + config.rate_min);
  const double hi = std::min(config.flow_max, previous_input + config.rate_max);
  double u = clamp(input, lo, hi);
  // The box clamp is exact by construction; the rate bound is on the
  // subtraction u - prev, whose rounding can spill one ulp past the corner.
  while (u - previous_input > config.rate_max && u > config.flow_min) {
    u = std::nextafter(u, -kInf);
  }
  while (u - previous_input < config.rate_min && u < config.flow_max) {
    u = std::nextafter(u, kInf);
  }
  return u;
}

double ocp_cost(const OcpInstance& instance, std::span<const double> inputs,
                std::span<const double> levels) {
  const auto horizon = static_cast<std::size_t>(instance.config.horizon);
  if (inputs.size() != horizon || levels.size() != horizon) {
    throw std::invalid_argument("ocp_cost: sequence length mismatch");
  }
  double cost = 0.0;
  double prev = instance.previous_input;
  for (std::size_t k = 0; k < horizon; ++k) {
    const double track = levels[k] - instance.reference[k];
    const double step = inputs[k] - prev;
    cost += instance.config.weight_tracking * track * track +
            instance.config.weight_increment * step * step;
    prev = inputs[k];
  }
  return cost;
}

OcpLinearization linearize_ocp(const OcpInstance& instance, std::span<const double> inputs,
                               std::span<const double> levels) {
  const int horizon = instance.config.horizon;
  if (static_cast<int>(inputs.size()) != horizon || static_cast<int>(levels.size()) != horizon) {
    throw std::invalid_argument("linearize_ocp: sequence length mismatch");
  }
  const double t_s = instance.params.sample_time;
  OcpLinearization lin;
  lin.dynamics_residual.resize(horizon);
  lin.state_coeff = Eigen::VectorXd::Zero(horizon);
  lin.input_coeff.resize(horizon);
  lin.cost_grad_inputs.resize(horizon);
  lin.cost_grad_levels.resize(horizon);

  double prev_level = instance.initial_level;
  for (int k = 0; k < horizon; ++k) {
    const double u_k = inputs[static_cast<std::size_t>(k)];
    const double rhs = dynamics_rhs(instance.params, prev_level, u_k);
    lin.dynamics_residual(k) = levels[static_cast<std::size_t>(k)] - prev_level - t_s * rhs;
    if (k == 0) {
      // x_0 is a fixed parameter, so only the input sensitivity is needed;
      // computed directly so an empty tank (x_0 = 0) stays linearizable.
      lin.input_coeff(0) = t_s / cross_section(instance.params.geometry, prev_level);
    } else {
      const DynamicsJacobian jac = dynamics_jacobian(instance.params, prev_level, u_k);
      lin.state_coeff(k) = 1.0 + t_s * jac.d_level;
      lin.input_coeff(k) = t_s * jac.d_inflow;
    }
    prev_level = levels[static_cast<std::size_t>(k)];
  }

  Eigen::Map<const Eigen::VectorXd> u(inputs.data(), horizon);
  const Eigen::VectorXd delta = increments(u, instance.previous_input);
  for (int k = 0; k < horizon; ++k) {
    double grad = 2.0 * instance.config.weight_increment * delta(k);
    if (k + 1 < horizon) grad -= 2.0 * instance.config.weight_increment * delta(k + 1);
    lin.cost_grad_inputs(k) = grad;
    lin.cost_grad_levels(k) =
        2.0 * instance.config.weight_tracking *
        (levels[static_cast<std::size_t>(k)] - instance.reference[static_cast<std::size_t>(k)]);
  }
  return lin;
}

OcpSolution sqp_solve(const OcpInstance& instance, const OcpSolution* initial_guess) {
  instance.validate();
  const OcpConfig& cfg = instance.config;
  const int horizon = cfg.horizon;
  const Eigen::MatrixXd diff = difference_matrix(horizon);

  OcpSolution out;
  Iterate it = build_initial_iterate(instance, initial_guess);
  double penalty = cfg.sqp.merit_penalty;

  for (int iter = 0; iter < cfg.sqp.max_iterations; ++iter) {
    OcpLinearization lin;
    try {
      lin = linearize_ocp(instance, {it.inputs.data(), static_cast<std::size_t>(horizon)},
                          {it.levels.data(), static_cast<std::size_t>(horizon)});
    } catch (const std::domain_error&) {
      out.status = SolveStatus::failed;
      finalize(instance, it, out);
      out.sqp_iterations = iter;
      return out;
    }
    const CondensedStep cond = condense(lin, horizon);

    // Quadratic subproblem over (input moves, slack moves).
    const Eigen::VectorXd delta = increments(it.inputs, instance.previous_input);
    Eigen::VectorXd track_err(horizon);
    for (int k = 0; k < horizon; ++k) {
      track_err(k) = it.levels(k) + cond.state_shift(k) -
                     instance.reference[static_cast<std::size_t>(k)];
    }

    const int n = 2 * horizon;
    QuadProgram qp;
    qp.hessian = Eigen::MatrixXd::Zero(n, n);
    qp.gradient = Eigen::VectorXd::Zero(n);
    qp.hessian.topLeftCorner(horizon, horizon) =
        2.0 * (cfg.weight_tracking * cond.state_map.transpose() * cond.state_map +
               cfg.weight_increment * diff.transpose() * diff);
    qp.hessian.bottomRightCorner(horizon, horizon) =
        2.0 * cfg.soft_level_penalty * Eigen::MatrixXd::Identity(horizon, horizon);
    qp.gradient.head(horizon) =
        2.0 * (cfg.weight_tracking * cond.state_map.transpose() * track_err +
               cfg.weight_increment * diff.transpose() * delta);
    qp.gradient.tail(horizon) = 2.0 * cfg.soft_level_penalty * it.slacks;

    const int m = 4 * horizon;
    qp.ineq_matrix = Eigen::MatrixXd::Zero(m, n);
    qp.ineq_bound = Eigen::VectorXd::Zero(m);
    // Rate corridor, two-sided.
    qp.ineq_matrix.topLeftCorner(horizon, horizon) = diff;
    qp.ineq_bound.head(horizon) = Eigen::VectorXd::Constant(horizon, cfg.rate_max) - delta;
    qp.ineq_matrix.block(horizon, 0, horizon, horizon) = -diff;
    qp.ineq_bound.segment(horizon, horizon) =
        delta - Eigen::VectorXd::Constant(horizon, cfg.rate_min);
    // Level bounds with slack relief.
    for (int k = 0; k < horizon; ++k) {
      qp.ineq_matrix.block(2 * horizon + k, 0, 1, horizon) = cond.state_map.row(k);
      qp.ineq_matrix(2 * horizon + k, horizon + k) = -1.0;
      qp.ineq_bound(2 * horizon + k) =
          cfg.level_max + it.slacks(k) - it.levels(k) - cond.state_shift(k);
      qp.ineq_matrix.block(3 * horizon + k, 0, 1, horizon) = -cond.state_map.row(k);
      qp.ineq_matrix(3 * horizon + k, horizon + k) = -1.0;
      qp.ineq_bound(3 * horizon + k) =
          it.levels(k) + cond.state_shift(k) + it.slacks(k) - cfg.level_min;
    }
    qp.lower.resize(n);
    qp.upper.resize(n);
    qp.lower.head(horizon) = Eigen::VectorXd::Constant(horizon, cfg.flow_min) - it.inputs;
    qp.upper.head(horizon) = Eigen::VectorXd::Constant(horizon, cfg.flow_max) - it.inputs;
    qp.lower.tail(horizon) = -it.slacks;
    qp.upper.tail(horizon) = Eigen::VectorXd::Constant(horizon, kInf);

    QpOptions qp_options;
    qp_options.tol = std::min(1e-9, cfg.sqp.kkt_tol);
    qp_options.max_iterations = 100 + 20 * n;
    QpSolution qp_sol;
    try {
      qp_sol = solve_qp(qp, std::nullopt, qp_options);
    } catch (const std::invalid_argument&) {
      // Numerically indefinite subproblem (iterate at the edge of the
      // linearizable region); surface it as a solver failure.
      out.status = SolveStatus::failed;
      finalize(instance, it, out);
      out.sqp_iterations = iter + 1;
      return out;
    }
    out.sqp_iterations = iter + 1;
    if (qp_sol.status == QpStatus::infeasible) {
      out.status = SolveStatus::failed;
      finalize(instance, it, out);
      return out;
    }

    Multipliers mult;
    mult.rate_hi = qp_sol.ineq_multipliers.head(horizon);
    mult.rate_lo = qp_sol.ineq_multipliers.segment(horizon, horizon);
    mult.level_hi = qp_sol.ineq_multipliers.segment(2 * horizon, horizon);
    mult.level_lo = qp_sol.ineq_multipliers.tail(horizon);
    mult.input_lo = qp_sol.lower_multipliers.head(horizon);
    mult.input_hi = qp_sol.upper_multipliers.head(horizon);
    mult.slack_lo = qp_sol.lower_multipliers.tail(horizon);
    mult.equality = recover_equality_multipliers(instance, lin, it, mult.level_hi, mult.level_lo);

    const double kkt = nlp_kkt_residual(instance, lin, it, mult);
    out.kkt_residual = kkt;
    if (kkt <= cfg.sqp.kkt_tol) {
      out.status = SolveStatus::optimal;
      finalize(instance, it, out);
      return out;
    }

    const Eigen::VectorXd input_move = qp_sol.z.head(horizon);
    const Eigen::VectorXd slack_move = qp_sol.z.tail(horizon);
    const Eigen::VectorXd level_move = cond.state_map * input_move + cond.state_shift;

    penalty = std::max(penalty, 2.0 * mult.equality.cwiseAbs().maxCoeff());

    const double merit_before = merit_value(instance, it, penalty);
    const double residual_l1 = lin.dynamics_residual.cwiseAbs().sum();
    const double directional = lin.cost_grad_inputs.dot(input_move) +
                               lin.cost_grad_levels.dot(level_move) +
                               2.0 * cfg.soft_level_penalty * it.slacks.dot(slack_move) -
                               penalty * residual_l1;

    const double move_norm =
        std::max(input_move.cwiseAbs().maxCoeff(), slack_move.cwiseAbs().maxCoeff());
    if (move_norm <= 1e-14 && residual_l1 <= cfg.sqp.kkt_tol) {
      // Stalled short of the tolerance; report the iterate honestly.
      out.status = SolveStatus::iteration_limit;
      finalize(instance, it, out);
      return out;
    }

    double step = 1.0;
    bool accepted = false;
    Iterate trial = it;
    SqpIterationRecord record;
    record.merit_before = merit_before;
    record.penalty = penalty;
    record.kkt_residual = kkt;
    record.qp_iterations = qp_sol.iterations;
    for (int back = 0; back < cfg.sqp.max_backtracks; ++back) {
      trial.inputs = it.inputs + step * input_move;
      trial.levels = it.levels + step * level_move;
      trial.slacks = it.slacks + step * slack_move;
      const double merit_trial = merit_value(instance, trial, penalty);
      if (merit_trial <= merit_before + cfg.sqp.armijo_c * step * directional) {
        record.merit_after = merit_trial;
        record.step_length = step;
        accepted = true;
        break;
      }
      step *= cfg.sqp.backtrack_factor;
    }
    if (!accepted) {
      record.merit_after = merit_before;
      record.step_length = 0.0;
      out.status = SolveStatus::iteration_limit;
      finalize(instance, it, out);
      out.history.push_back(record);
      return out;
    }
    it = trial;
    out.history.push_back(record);
  }

  out.status = SolveStatus::iteration_limit;
  finalize(instance, it, out);
  return out;
}

}  // namespace tankmpc
