#include <doctest.h>

#include <cmath>
#include <random>
#include <vector>

#include "oracles.hpp"
#include "tankmpc/nmpc_solver.hpp"

using namespace tankmpc;

namespace {

OcpInstance make_instance(int horizon, double initial_level, double reference,
                          double previous_input) {
  OcpInstance instance;
  instance.config.horizon = horizon;
  instance.params = TankParams{};
  instance.initial_level = initial_level;
  instance.previous_input = previous_input;
  instance.reference.assign(static_cast<std::size_t>(horizon), reference);
  return instance;
}

double steady04() { return steady_state_flow(TankParams{}, 0.4); }

// Cost of an input sequence through the exact Euler rollout; the level
// bounds are inactive in every oracle scenario so no slack term appears.
double rollout_cost(const OcpInstance& instance, const std::vector<double>& inputs) {
  const std::vector<double> levels =
      rollout(instance.params, instance.initial_level, inputs);
  return ocp_cost(instance, inputs, levels);
}

}  // namespace

TEST_CASE("rollout chains euler steps") {
  const TankParams params;
  const double steady = steady04();

  const std::vector<double> constant(5, steady);
  for (double level : rollout(params, 0.4, constant)) {
    CHECK(level == doctest::Approx(0.4).epsilon(1e-15));
  }

  const std::vector<double> push{0.1, 0.1};
  const std::vector<double> levels = rollout(params, 0.4, push);
  REQUIRE(levels.size() == 2);
  CHECK(levels[0] == doctest::Approx(0.52375906055497749).epsilon(1e-14));
  CHECK(levels[1] == doctest::Approx(0.61753512664004707).epsilon(1e-14));

  CHECK(rollout(params, 0.4, std::vector<double>{}).empty());
}

TEST_CASE("stage cost: equilibrium, single stage reduction, independent recomputation") {
  const double steady = steady04();
  OcpInstance instance = make_instance(4, 0.4, 0.4, steady);
  const std::vector<double> inputs(4, steady);
  const std::vector<double> levels(4, 0.4);
  CHECK(ocp_cost(instance, inputs, levels) == doctest::Approx(0.0).epsilon(1e-15));

  OcpInstance single = make_instance(1, 0.4, 0.5, steady);
  single.config.weight_increment = 0.0;
  const std::vector<double> one_input{0.08};
  const std::vector<double> one_level =
      rollout(single.params, single.initial_level, one_input);
  const double expected = (one_level[0] - 0.5) * (one_level[0] - 0.5);
  CHECK(ocp_cost(single, one_input, one_level) == doctest::Approx(expected).epsilon(1e-14));

  // random sequences against a naive re-evaluation
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> flow(0.0, 0.1);
  for (int trial = 0; trial < 20; ++trial) {
    OcpInstance random_instance = make_instance(6, 0.4, 0.55, steady);
    std::vector<double> u(6);
    for (double& v : u) v = flow(rng);
    const std::vector<double> x = rollout(random_instance.params, 0.4, u);
    double naive = 0.0;
    double prev = random_instance.previous_input;
    for (int k = 0; k < 6; ++k) {
      naive += random_instance.config.weight_tracking * (x[static_cast<std::size_t>(k)] - 0.55) *
               (x[static_cast<std::size_t>(k)] - 0.55);
      naive += random_instance.config.weight_increment *
               (u[static_cast<std::size_t>(k)] - prev) * (u[static_cast<std::size_t>(k)] - prev);
      prev = u[static_cast<std::size_t>(k)];
    }
    CHECK(ocp_cost(random_instance, u, x) == doctest::Approx(naive).epsilon(1e-13));
  }

  const std::vector<double> short_inputs{0.05};
  CHECK_THROWS_AS(ocp_cost(instance, short_inputs, levels), std::invalid_argument);
}

TEST_CASE("equilibrium instances are solved exactly at any horizon") {
  const double steady = steady04();
  for (int horizon : {1, 5, 20}) {
    const OcpInstance instance = make_instance(horizon, 0.4, 0.4, steady);
    const OcpSolution solution = sqp_solve(instance);
    REQUIRE(solution.status == SolveStatus::optimal);
    CHECK(solution.cost <= 1e-12);
    for (double u : solution.inputs) CHECK(u == doctest::Approx(steady).epsilon(1e-12));
    CHECK(solution.kkt_residual <= instance.config.sqp.kkt_tol);
  }
}

TEST_CASE("single-stage solve matches a fine grid search") {
  OcpInstance instance = make_instance(1, 0.4, 0.5, steady04());
  instance.config.weight_increment = 0.0;
  instance.config.rate_min = -1.0;  // leave only the flow box active
  instance.config.rate_max = 1.0;

  const OcpSolution solution = sqp_solve(instance);
  REQUIRE(solution.status == SolveStatus::optimal);

  double best_u = 0.0;
  double best_cost = 1e30;
  for (int i = 0; i <= 100000; ++i) {
    const double u = 0.1 * i / 100000.0;
    const double cost = rollout_cost(instance, {u});
    if (cost < best_cost) {
      best_cost = cost;
      best_u = u;
    }
  }
  CHECK(solution.inputs[0] == doctest::Approx(best_u).epsilon(1e-5));
}

TEST_CASE("two-stage solve matches a feasibility-filtered 2-d grid search") {
  OcpInstance instance = make_instance(2, 0.4, 0.6, steady04());
  instance.config.weight_tracking = 1.0;
  instance.config.weight_increment = 0.1;
  instance.config.rate_min = -0.02;
  instance.config.rate_max = 0.02;

  const OcpSolution solution = sqp_solve(instance);
  REQUIRE(solution.status == SolveStatus::optimal);

  double best_u0 = 0.0, best_u1 = 0.0, best_cost = 1e30;
  const double prev = instance.previous_input;
  for (int i = 0; i <= 1000; ++i) {
    const double u0 = 0.1 * i / 1000.0;
    if (u0 - prev < -0.02 || u0 - prev > 0.02) continue;
    for (int j = 0; j <= 1000; ++j) {
      const double u1 = 0.1 * j / 1000.0;
      if (u1 - u0 < -0.02 || u1 - u0 > 0.02) continue;
      const double cost = rollout_cost(instance, {u0, u1});
      if (cost < best_cost) {
        best_cost = cost;
        best_u0 = u0;
        best_u1 = u1;
      }
    }
  }
  CHECK(solution.inputs[0] == doctest::Approx(best_u0).epsilon(2e-3));
  CHECK(solution.inputs[1] == doctest::Approx(best_u1).epsilon(2e-3));
}

TEST_CASE("lagrangian gradient matches finite differences at random feasible points") {
  std::mt19937_64 rng(42);
  std::uniform_real_distribution<double> flow(0.005, 0.095);
  std::uniform_real_distribution<double> level(0.1, 1.5);
  std::uniform_real_distribution<double> mult(-1.0, 1.0);
  const int horizon = 5;

  for (int trial = 0; trial < 20; ++trial) {
    OcpInstance instance = make_instance(horizon, level(rng), 0.6, steady04());
    std::vector<double> u(horizon), x(horizon);
    for (double& v : u) v = flow(rng);
    for (double& v : x) v = level(rng);
    Eigen::VectorXd nu(horizon);
    for (int k = 0; k < horizon; ++k) nu(k) = mult(rng);

    const OcpLinearization lin = linearize_ocp(instance, u, x);

    auto lagrangian = [&](const std::vector<double>& uu, const std::vector<double>& xx) {
      double value = ocp_cost(instance, uu, xx);
      double prev = instance.initial_level;
      for (int k = 0; k < horizon; ++k) {
        const double c = xx[static_cast<std::size_t>(k)] - prev -
                         instance.params.sample_time *
                             dynamics_rhs(instance.params, prev, uu[static_cast<std::size_t>(k)]);
        value += nu(k) * c;
        prev = xx[static_cast<std::size_t>(k)];
      }
      return value;
    };

    for (int k = 0; k < horizon; ++k) {
      const double analytic = lin.cost_grad_inputs(k) - nu(k) * lin.input_coeff(k);
      std::vector<double> up = u, down = u;
      up[static_cast<std::size_t>(k)] += 1e-7;
      down[static_cast<std::size_t>(k)] -= 1e-7;
      const double fd = (lagrangian(up, x) - lagrangian(down, x)) / 2e-7;
      CHECK(analytic == doctest::Approx(fd).epsilon(1e-6));
    }
    for (int j = 0; j < horizon; ++j) {
      double analytic = lin.cost_grad_levels(j) + nu(j);
      if (j + 1 < horizon) analytic -= nu(j + 1) * lin.state_coeff(j + 1);
      std::vector<double> up = x, down = x;
      up[static_cast<std::size_t>(j)] += 1e-7;
      down[static_cast<std::size_t>(j)] -= 1e-7;
      const double fd = (lagrangian(u, up) - lagrangian(u, down)) / 2e-7;
      CHECK(analytic == doctest::Approx(fd).epsilon(1e-6));
    }
  }
}

TEST_CASE("merit function does not increase across accepted iterations") {
  OcpInstance instance = make_instance(10, 0.4, 0.8, steady04());
  const OcpSolution solution = sqp_solve(instance);
  REQUIRE(solution.status == SolveStatus::optimal);
  REQUIRE(!solution.history.empty());
  for (const SqpIterationRecord& record : solution.history) {
    CHECK(record.merit_after <= record.merit_before + 1e-10);
    CHECK(record.step_length > 0.0);
  }
}

TEST_CASE("uniformly scaled weights leave the argmin unchanged") {
  OcpInstance instance = make_instance(8, 0.35, 0.7, steady04());
  const OcpSolution base = sqp_solve(instance);
  OcpInstance scaled = instance;
  scaled.config.weight_tracking *= 37.5;
  scaled.config.weight_increment *= 37.5;
  scaled.config.soft_level_penalty *= 37.5;
  const OcpSolution other = sqp_solve(scaled);
  REQUIRE(base.status == SolveStatus::optimal);
  REQUIRE(other.status == SolveStatus::optimal);
  for (int k = 0; k < 8; ++k) {
    CHECK(std::abs(base.inputs[static_cast<std::size_t>(k)] -
                   other.inputs[static_cast<std::size_t>(k)]) <=
          10.0 * instance.config.sqp.kkt_tol);
  }
}

TEST_CASE("returned inputs satisfy the hard bounds exactly") {
  std::mt19937_64 rng(31);
  std::uniform_real_distribution<double> level(0.05, 1.9);
  std::uniform_real_distribution<double> target(0.05, 1.5);
  std::uniform_real_distribution<double> flow(0.0, 0.1);
  for (int trial = 0; trial < 30; ++trial) {
    OcpInstance instance = make_instance(10, level(rng), target(rng), flow(rng));
    const OcpSolution solution = sqp_solve(instance);
    REQUIRE(solution.status != SolveStatus::failed);
    double prev = instance.previous_input;
    for (double u : solution.inputs) {
      CHECK(u >= instance.config.flow_min);
      CHECK(u <= instance.config.flow_max);
      CHECK(u - prev >= instance.config.rate_min);
      CHECK(u - prev <= instance.config.rate_max);
      prev = u;
    }
    // predicted levels obey the dynamics to solver tolerance
    if (solution.status == SolveStatus::optimal) {
      double x = instance.initial_level;
      for (int k = 0; k < 10; ++k) {
        const double next =
            x + instance.params.sample_time *
                    dynamics_rhs(instance.params, x, solution.inputs[static_cast<std::size_t>(k)]);
        CHECK(std::abs(solution.levels[static_cast<std::size_t>(k)] - next) <= 1e-6);
        x = solution.levels[static_cast<std::size_t>(k)];
      }
    }
  }
}

TEST_CASE("iteration cap yields an honest iteration_limit status") {
  OcpInstance instance = make_instance(10, 0.2, 1.2, steady04());
  instance.config.sqp.max_iterations = 1;
  const OcpSolution solution = sqp_solve(instance);
  CHECK(solution.status == SolveStatus::iteration_limit);
  CHECK(solution.inputs.size() == 10);
}

TEST_CASE("level bounds are honored through the soft penalty") {
  // reference pinned at the optimizer floor: the solve must not dive below
  OcpInstance instance = make_instance(10, 0.3, 0.01, 0.02);
  const OcpSolution solution = sqp_solve(instance);
  REQUIRE(solution.status == SolveStatus::optimal);
  for (double x : solution.levels) {
    CHECK(x >= instance.config.level_min - 1e-4);  // slack keeps violations tiny
  }
}
