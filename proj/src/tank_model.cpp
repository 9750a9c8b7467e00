#include "tankmpc/tank_model.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

namespace tankmpc {

namespace {

constexpr double kPi = std::numbers::pi;

void check_level_range(const TankGeometry& geometry, double h, const char* where) {
  if (!(h >= 0.0) || !(h <= geometry.max_height)) {
    throw std::domain_error(std::string(where) + ": level " + std::to_string(h) +
                            " outside [0, " + std::to_string(geometry.max_height) + "]");
  }
}

}  // namespace

void TankGeometry::validate() const {
  if (!(upper_radius > 0.0) || !(bottom_radius > 0.0) || !(max_height > 0.0)) {
    throw std::invalid_argument("TankGeometry: radii and max_height must be positive");
  }
  if (upper_radius < bottom_radius) {
    throw std::invalid_argument("TankGeometry: upper_radius must be >= bottom_radius");
  }
}

void TankParams::validate() const {
  geometry.validate();
  if (!(valve_coeff > 0.0)) {
    throw std::invalid_argument("TankParams: valve_coeff must be positive");
  }
  if (!(sample_time > 0.0)) {
    throw std::invalid_argument("TankParams: sample_time must be positive");
  }
  if (!(q_in_min >= 0.0) || !(q_in_min < q_in_max)) {
    throw std::invalid_argument("TankParams: need 0 <= q_in_min < q_in_max");
  }
}

double surface_radius(const TankGeometry& geometry, double h) {
  check_level_range(geometry, h, "surface_radius");
  return geometry.bottom_radius +
         (geometry.upper_radius - geometry.bottom_radius) / geometry.max_height * h;
}

double frustum_volume(const TankGeometry& geometry, double h) {
  check_level_range(geometry, h, "frustum_volume");
  const double r = surface_radius(geometry, h);
  const double r2 = geometry.bottom_radius;
  return kPi * h / 3.0 * (r * r + r2 * r + r2 * r2);
}

double cross_section(const TankGeometry& geometry, double h) {
  check_level_range(geometry, h, "cross_section");
  const double r = surface_radius(geometry, h);
  return kPi * r * r;
}

double outflow(const TankParams& params, double h) {
  if (!(h >= 0.0)) {
    throw std::domain_error("outflow: negative level");
  }
  return params.valve_coeff * std::sqrt(h);
}

double dynamics_rhs(const TankParams& params, double h, double q_in) {
  return (q_in - outflow(params, h)) / cross_section(params.geometry, h);
}

double euler_step(const TankParams& params, double h, double q_in) {
  const double next = h + params.sample_time * dynamics_rhs(params, h, q_in);
  if (next < 0.0) {
    throw std::domain_error("euler_step: step drives the level negative");
  }
  return next;
}

DynamicsJacobian dynamics_jacobian(const TankParams& params, double h, double q_in) {
  if (!(h > 0.0)) {
    throw std::domain_error("dynamics_jacobian: undefined at h <= 0");
  }
  const TankGeometry& geo = params.geometry;
  const double area = cross_section(geo, h);
  const double slope = (geo.upper_radius - geo.bottom_radius) / geo.max_height;
  const double area_prime = 2.0 * kPi * surface_radius(geo, h) * slope;
  const double imbalance = q_in - outflow(params, h);
  DynamicsJacobian jac;
  jac.d_level =
      (-params.valve_coeff / (2.0 * std::sqrt(h)) * area - imbalance * area_prime) /
      (area * area);
  jac.d_inflow = 1.0 / area;
  return jac;
}

double steady_state_flow(const TankParams& params, double level) {
  if (!(level > 0.0) || !(level <= params.geometry.max_height)) {
    throw std::domain_error("steady_state_flow: level outside (0, h_max]");
  }
  return params.valve_coeff * std::sqrt(level);
}

double steady_state_level(const TankParams& params, double inflow) {
  const double q_full = params.valve_coeff * std::sqrt(params.geometry.max_height);
  if (!(inflow > 0.0) || !(inflow <= q_full)) {
    throw std::domain_error("steady_state_level: inflow outside (0, k_v sqrt(h_max)]");
  }
  const double ratio = inflow / params.valve_coeff;
  return ratio * ratio;
}

OperatingPoint operating_point_at(const TankParams& params, double level) {
  return OperatingPoint{level, steady_state_flow(params, level)};
}

LinearTankModel linearize(const TankParams& params, const OperatingPoint& op) {
  if (!(op.level > 0.0) || !(op.level <= params.geometry.max_height)) {
    throw std::domain_error("linearize: operating level outside (0, h_max]");
  }
  const double residual = op.inflow - outflow(params, op.level);
  if (std::abs(residual) > 1e-9) {
    throw std::invalid_argument("linearize: operating point is not an equilibrium");
  }
  const DynamicsJacobian jac = dynamics_jacobian(params, op.level, op.inflow);
  LinearTankModel model;
  model.a_cont = jac.d_level;
  model.b_cont = jac.d_inflow;
  model.a_disc = std::exp(jac.d_level * params.sample_time);
  model.b_disc = (model.a_disc - 1.0) / model.a_cont * model.b_cont;
  model.operating_point = op;
  model.sample_time = params.sample_time;
  return model;
}

double rk4_step(const TankParams& params, double h, double q_in, double dt) {
  const double k1 = dynamics_rhs(params, h, q_in);
  const double k2 = dynamics_rhs(params, h + 0.5 * dt * k1, q_in);
  const double k3 = dynamics_rhs(params, h + 0.5 * dt * k2, q_in);
  const double k4 = dynamics_rhs(params, h + dt * k3, q_in);
  const double next = h + dt / 6.0 * (k1 + 2.0 * (k2 + k3) + k4);
  if (next < 0.0) {
    throw std::domain_error("rk4_step: step drives the level negative");
  }
  return next;
}

}  // namespace tankmpc
