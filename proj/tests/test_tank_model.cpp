#include <doctest.h>

#include <cmath>
#include <numbers>
#include <stdexcept>

#include "oracles.hpp"
#include "tankmpc/tank_model.hpp"

using namespace tankmpc;

namespace {

TankParams reference_tank() { return TankParams{}; }

constexpr double kPi = std::numbers::pi;
// Equilibrium inflow at the 0.4 m operating level, k_v * sqrt(0.4).
constexpr double kSteadyFlow = 0.04743416490252569;

}  // namespace

TEST_CASE("surface radius endpoints and interior value") {
  const TankGeometry geo;
  CHECK(surface_radius(geo, 0.0) == doctest::Approx(0.4).epsilon(1e-15));
  CHECK(surface_radius(geo, 2.0) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(surface_radius(geo, 0.4) == doctest::Approx(0.52).epsilon(1e-15));
  // interior values interpolate the endpoints linearly
  const double t = 0.4 / 2.0;
  CHECK(surface_radius(geo, 0.4) ==
        doctest::Approx((1.0 - t) * 0.4 + t * 1.0).epsilon(1e-15));
  CHECK_THROWS_AS(surface_radius(geo, -0.01), std::domain_error);
  CHECK_THROWS_AS(surface_radius(geo, 2.01), std::domain_error);
}

TEST_CASE("frustum volume closed form matches quadrature") {
  const TankGeometry geo;
  CHECK(frustum_volume(geo, 0.0) == 0.0);
  CHECK(frustum_volume(geo, 2.0) == doctest::Approx(3.267256359733385).epsilon(1e-14));
  CHECK(frustum_volume(geo, 0.4) == doctest::Approx(0.2674123666735632).epsilon(1e-14));

  auto area = [&](double s) { return kPi * surface_radius(geo, s) * surface_radius(geo, s); };
  for (double h : {0.4, 1.0, 2.0}) {
    const double integral = oracles::simpson(area, 0.0, h, 2000);
    CHECK(frustum_volume(geo, h) == doctest::Approx(integral).epsilon(1e-10));
  }
}

TEST_CASE("volume forms agree: factored vs expanded polynomial") {
  const TankGeometry geo;
  const double slope = (geo.upper_radius - geo.bottom_radius) / geo.max_height;
  for (int i = 0; i <= 1000; ++i) {
    const double h = 2.0 * i / 1000.0;
    const double r2 = geo.bottom_radius;
    const double expanded =
        kPi * h / 3.0 * (3.0 * r2 * r2 + 3.0 * r2 * slope * h + slope * slope * h * h);
    CHECK(frustum_volume(geo, h) == doctest::Approx(expanded).epsilon(1e-12));
  }
}

TEST_CASE("volume is strictly increasing and convex in the level") {
  const TankGeometry geo;
  double prev_v = 0.0;
  double prev_dv = -1.0;
  for (int i = 1; i <= 200; ++i) {
    const double h = 2.0 * i / 200.0;
    const double v = frustum_volume(geo, h);
    CHECK(v > prev_v);
    const double dv = v - prev_v;
    CHECK(dv > prev_dv);  // increasing increments = convexity on a uniform grid
    prev_v = v;
    prev_dv = dv;
  }
}

TEST_CASE("cross section values and volume derivative consistency") {
  const TankGeometry geo;
  CHECK(cross_section(geo, 0.0) == doctest::Approx(kPi * 0.16).epsilon(1e-15));
  CHECK(cross_section(geo, 0.4) == doctest::Approx(kPi * 0.2704).epsilon(1e-15));
  CHECK(cross_section(geo, 2.0) == doctest::Approx(kPi).epsilon(1e-15));

  for (int i = 0; i <= 1000; ++i) {
    const double h = 0.001 + (2.0 - 0.002) * i / 1000.0;
    const double fd = oracles::central_diff(
        [&](double s) { return frustum_volume(geo, s); }, h, 1e-6);
    CHECK(cross_section(geo, h) == doctest::Approx(fd).epsilon(1e-8));
  }
}

TEST_CASE("outflow follows the square-root valve law") {
  const TankParams params = reference_tank();
  CHECK(outflow(params, 0.0) == 0.0);
  CHECK(outflow(params, 0.4) == doctest::Approx(0.0474).epsilon(2e-3));
  CHECK(outflow(params, 0.4) == doctest::Approx(kSteadyFlow).epsilon(1e-15));
  CHECK(outflow(params, 1.0) == doctest::Approx(0.075).epsilon(1e-15));
  CHECK_THROWS_AS(outflow(params, -1e-9), std::domain_error);
}

TEST_CASE("level rate at the reference point") {
  const TankParams params = reference_tank();
  CHECK(dynamics_rhs(params, 0.4, kSteadyFlow) == doctest::Approx(0.0).epsilon(1e-15));
  CHECK(dynamics_rhs(params, 0.4, 0.1) ==
        doctest::Approx(0.061879530277488745).epsilon(1e-14));
  CHECK(dynamics_rhs(params, 0.4, 0.0) ==
        doctest::Approx(-0.055838622896990054).epsilon(1e-14));
}

TEST_CASE("euler step examples and the equilibrium fixed point") {
  const TankParams params = reference_tank();
  const double steady = steady_state_flow(params, 0.4);
  CHECK(euler_step(params, 0.4, steady) == 0.4);  // residual is exactly zero
  CHECK(euler_step(params, 0.4, 0.1) == doctest::Approx(0.52375906055497749).epsilon(1e-14));
  CHECK(euler_step(params, 0.4, 0.0) == doctest::Approx(0.28832275420601989).epsilon(1e-14));

  TankParams fast = params;
  fast.sample_time = 100.0;  // drains far past empty in one step
  CHECK_THROWS_AS(euler_step(fast, 0.1, 0.0), std::domain_error);
}

TEST_CASE("analytic jacobian matches finite differences on a grid") {
  const TankParams params = reference_tank();
  for (int i = 0; i < 20; ++i) {
    // top of the grid keeps the FD stencil inside the domain
    const double h = 0.05 + (1.999 - 0.05) * i / 19.0;
    for (int j = 0; j < 20; ++j) {
      const double q = 0.1 * j / 19.0;
      const DynamicsJacobian jac = dynamics_jacobian(params, h, q);
      const double fd_h = oracles::central_diff(
          [&](double s) { return dynamics_rhs(params, s, q); }, h, 1e-6);
      const double fd_q = oracles::central_diff(
          [&](double s) { return dynamics_rhs(params, h, s); }, q, 1e-6);
      CHECK(jac.d_level == doctest::Approx(fd_h).epsilon(1e-6));
      CHECK(jac.d_inflow == doctest::Approx(fd_q).epsilon(1e-6));
      CHECK(jac.d_inflow > 0.0);
    }
  }
}

TEST_CASE("jacobian at the reference operating points") {
  const TankParams params = reference_tank();
  const DynamicsJacobian at_op = dynamics_jacobian(params, 0.4, kSteadyFlow);
  CHECK(at_op.d_level == doctest::Approx(-0.069798278621237567).epsilon(1e-12));
  CHECK(at_op.d_inflow == doctest::Approx(1.177181531744788).epsilon(1e-12));
  const DynamicsJacobian mid = dynamics_jacobian(params, 1.0, 0.075);
  CHECK(mid.d_inflow == doctest::Approx(1.0 / (kPi * 0.49)).epsilon(1e-15));
  CHECK_THROWS_AS(dynamics_jacobian(params, 0.0, 0.05), std::domain_error);
}

TEST_CASE("steady state pair and round trip") {
  const TankParams params = reference_tank();
  CHECK(steady_state_flow(params, 0.4) == doctest::Approx(0.0474).epsilon(2e-3));
  CHECK(steady_state_level(params, 0.075) == doctest::Approx(1.0).epsilon(1e-15));
  for (double h : {0.1, 0.4, 1.5}) {
    CHECK(steady_state_level(params, steady_state_flow(params, h)) ==
          doctest::Approx(h).epsilon(1e-12));
  }
  CHECK_THROWS_AS(steady_state_flow(params, 0.0), std::domain_error);
  CHECK_THROWS_AS(steady_state_flow(params, 2.5), std::domain_error);
  CHECK_THROWS_AS(steady_state_level(params, 0.2), std::domain_error);
}

TEST_CASE("linearization at the table operating point") {
  const TankParams params = reference_tank();
  const LinearTankModel model = linearize(params, operating_point_at(params, 0.4));
  CHECK(model.a_cont == doctest::Approx(-0.069798278621237567).epsilon(1e-12));
  CHECK(model.b_cont == doctest::Approx(1.177181531744788).epsilon(1e-12));
  CHECK(model.a_disc == doctest::Approx(0.86970904244309443).epsilon(1e-12));
  CHECK(model.b_disc == doctest::Approx(2.1974196501554612).epsilon(1e-12));
  CHECK(model.a_cont < 0.0);
  // deviation model fixed point at the origin
  CHECK(model.a_disc * 0.0 + model.b_disc * 0.0 == 0.0);

  CHECK_THROWS_AS(linearize(params, OperatingPoint{0.4, 0.05}), std::invalid_argument);
}

TEST_CASE("zero-order hold matches a dense integration of the linear ODE") {
  const TankParams params = reference_tank();
  const LinearTankModel model = linearize(params, operating_point_at(params, 0.4));
  const double x0 = 0.03;
  const double u = 0.004;
  // classical RK4 on dx = a x + b u with tiny steps
  double x = x0;
  const int steps = 20000;
  const double dt = params.sample_time / steps;
  auto rate = [&](double s) { return model.a_cont * s + model.b_cont * u; };
  for (int i = 0; i < steps; ++i) {
    const double k1 = rate(x);
    const double k2 = rate(x + 0.5 * dt * k1);
    const double k3 = rate(x + 0.5 * dt * k2);
    const double k4 = rate(x + dt * k3);
    x += dt / 6.0 * (k1 + 2.0 * (k2 + k3) + k4);
  }
  CHECK(model.a_disc * x0 + model.b_disc * u == doctest::Approx(x).epsilon(1e-10));
}

TEST_CASE("rk4 plant step: equilibrium, accuracy, and euler gap") {
  const TankParams params = reference_tank();
  const double steady = steady_state_flow(params, 0.4);
  CHECK(rk4_step(params, 0.4, steady, 2.0) == doctest::Approx(0.4).epsilon(1e-12));

  // ten chained substeps of 0.2 s against a very fine explicit Euler run
  double coarse = 0.4;
  for (int i = 0; i < 10; ++i) coarse = rk4_step(params, coarse, 0.1, 0.2);
  double fine = 0.4;
  const int n = 2000000;
  const double dt = 2.0 / n;
  for (int i = 0; i < n; ++i) fine += dt * dynamics_rhs(params, fine, 0.1);
  CHECK(coarse == doctest::Approx(fine).epsilon(1e-8));

  // a single design-model Euler step of T_s = 2 is visibly cruder
  const double single_euler = euler_step(params, 0.4, 0.1);
  double rk4_full = rk4_step(params, 0.4, 0.1, 2.0);
  CHECK(std::abs(single_euler - rk4_full) > 1e-4);
}
