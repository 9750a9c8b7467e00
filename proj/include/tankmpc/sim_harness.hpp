#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "tankmpc/controllers.hpp"
#include "tankmpc/tank_model.hpp"

namespace tankmpc {

struct ReferenceStep {
  double time = 0.0;
  double level = 0.0;
};

/// Closed-loop experiment description. The plant truth integrates with RK4
/// substeps; plant_kv_scale perturbs the plant's valve coefficient relative
/// to the controller's design model for mismatch studies.
struct Scenario {
  double duration = 400.0;
  std::vector<ReferenceStep> reference_schedule;
  double initial_level = 0.4;
  double initial_input = 0.0;
  int plant_substeps = 10;
  double plant_kv_scale = 1.0;
  bool preview = true;          // controllers see the scheduled future reference
  double noise_amplitude = 0.0; // uniform measurement noise, off by default

  void validate(const TankParams& params) const;
  double reference_at(double time) const;
};

struct StepRecord {
  double t = 0.0;
  double h_ref = 0.0;
  double h_plant = 0.0;
  double u = 0.0;
  double du = 0.0;
  double d_hat = 0.0;
  double cost = 0.0;
  int iterations = 0;
  double kkt_residual = 0.0;
  double solve_time = 0.0;
};

enum class SimStatus { completed, aborted_empty, aborted_overflow };

struct EventMetrics {
  double time = 0.0;
  double level_before = 0.0;
  double level_target = 0.0;
  double overshoot = 0.0;    // beyond target on an upward step
  double undershoot = 0.0;   // beyond target on a downward step
  double settling_time = 0.0;
  bool settled = false;
};

struct SimMetrics {
  double ise = 0.0;
  double iae = 0.0;
  double max_overshoot = 0.0;
  double max_undershoot = 0.0;
  int input_bound_violations = 0;  // exact comparisons, must stay 0
  int rate_bound_violations = 0;
  std::vector<EventMetrics> events;
  // |h - r| at the end of each constant-reference window's hold phase.
  // With preview on, the controller deliberately leaves the reference just
  // before the next step (anticipation), so interior windows are evaluated
  // at the last sample whose horizon does not yet see the coming event.
  std::vector<double> window_end_errors;
};

struct SimTrace {
  std::vector<StepRecord> records;
  SimMetrics metrics;
  SimStatus status = SimStatus::completed;
  double abort_time = 0.0;
  int clamp_events = 0;  // plant state clamped at empty by the integrator
  Scenario scenario;
  double sample_time = 0.0;
  int preview_horizon = 0;
  // Bounds the controller was configured with, kept for exact trace checks.
  double flow_min = 0.0, flow_max = 0.0, rate_min = 0.0, rate_max = 0.0;
};

/// Run the receding-horizon loop: measure, solve, hold the input for one
/// sample while the plant integrates with RK4 substeps, record. Rows are
/// written for t = 0, T_s, ..., floor(duration/T_s)*T_s.
SimTrace run_closed_loop(const Scenario& scenario, Controller& controller,
                         const TankParams& params, std::uint64_t noise_seed = 0);

/// Tracking and constraint metrics of a finished trace.
SimMetrics compute_metrics(const SimTrace& trace);

/// CSV with the exact column set consumed by the plotting tools:
/// t,h_ref,h_plant,u,du,d_hat,cost,sqp_iters,kkt_residual,solve_time_s
void write_trace_csv(const SimTrace& trace, std::ostream& out);

}  // namespace tankmpc
