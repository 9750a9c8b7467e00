#pragma once

#include <span>
#include <vector>

namespace tankmpc {

/// Inverted frustum of a right cone: the cross section widens with level.
struct TankGeometry {
  double upper_radius = 1.0;   // R1 [m], radius at h = max_height
  double bottom_radius = 0.4;  // R2 [m], radius at h = 0
  double max_height = 2.0;     // [m]

  void validate() const;
};

struct TankParams {
  TankGeometry geometry;
  double valve_coeff = 0.075;  // k_v [m^2.5/s], Bernoulli outflow constant
  double q_in_min = 0.0;       // [m^3/s]
  double q_in_max = 0.1;       // [m^3/s]
  double sample_time = 2.0;    // T_s [s]

  void validate() const;
};

/// Equilibrium pair: inflow = valve_coeff * sqrt(level).
struct OperatingPoint {
  double level = 0.4;    // h_L [m]
  double inflow = 0.0;   // q_in,L [m^3/s]
};

/// Scalar state-space model of the level deviation x = h - h_L driven by
/// the inflow deviation u = q_in - q_in,L. Continuous coefficients come
/// from the analytic Jacobian, discrete ones from exact zero-order hold.
struct LinearTankModel {
  double a_cont = 0.0;  // [1/s], negative for any valid operating point
  double b_cont = 0.0;  // [1/m^2]
  double a_disc = 0.0;
  double b_disc = 0.0;
  OperatingPoint operating_point;
  double sample_time = 0.0;
};

struct DynamicsJacobian {
  double d_level = 0.0;   // d(rhs)/dh [1/s]
  double d_inflow = 0.0;  // d(rhs)/dq [1/m^2]
};

/// Liquid surface radius r_f(h) = R2 + (R1 - R2)/h_max * h.
double surface_radius(const TankGeometry& geometry, double h);

/// Stored volume of the partial frustum at level h.
double frustum_volume(const TankGeometry& geometry, double h);

/// F(h) = dV/dh = pi * r_f(h)^2. Strictly positive on [0, h_max].
double cross_section(const TankGeometry& geometry, double h);

/// Outlet flow k_v * sqrt(h).
double outflow(const TankParams& params, double h);

/// Level rate (q_in - k_v sqrt(h)) / F(h) in m/s.
double dynamics_rhs(const TankParams& params, double h, double q_in);

/// One explicit Euler step of length sample_time. Throws std::domain_error
/// if the step would drive the level negative; a result above max_height is
/// returned as-is (the caller decides whether that is acceptable).
double euler_step(const TankParams& params, double h, double q_in);

/// Analytic partial derivatives of dynamics_rhs. Requires h > 0 because of
/// the sqrt-derivative singularity at the empty tank.
DynamicsJacobian dynamics_jacobian(const TankParams& params, double h, double q_in);

/// Equilibrium inflow for a given level, q = k_v sqrt(h_L).
double steady_state_flow(const TankParams& params, double level);

/// Equilibrium level for a given inflow, h = (q / k_v)^2.
double steady_state_level(const TankParams& params, double inflow);

/// Convenience: the exact equilibrium pair at a given level.
OperatingPoint operating_point_at(const TankParams& params, double level);

/// First-order Taylor expansion around an equilibrium, discretized by exact
/// zero-order hold. Rejects operating points whose steady-state identity
/// |q_L - k_v sqrt(h_L)| exceeds 1e-9.
LinearTankModel linearize(const TankParams& params, const OperatingPoint& op);

/// Classical fixed-step RK4 integration of the level ODE with the inflow
/// held constant over dt. Plant-truth integrator for the simulation; the
/// controllers deliberately keep the coarser Euler/ZOH design models.
double rk4_step(const TankParams& params, double h, double q_in, double dt);

}  // namespace tankmpc
