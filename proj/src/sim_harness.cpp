#include "tankmpc/sim_harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ostream>
#include <random>
#include <stdexcept>

namespace tankmpc {

namespace {

double clamp(double v, double lo, double hi) { return std::min(std::max(v, lo), hi); }

void write_csv_value(std::ostream& out, double value) {
  char buffer[32];
  std::snprintf(buffer, sizeof(buffer), "%.9g", value);
  out << buffer;
}

}  // namespace

void Scenario::validate(const TankParams& params) const {
  params.validate();
  if (!(duration > 0.0)) throw std::invalid_argument("Scenario: duration must be positive");
  const double h_max = params.geometry.max_height;
  double last_time = -1.0;
  for (const ReferenceStep& step : reference_schedule) {
    if (!(step.time >= 0.0) || !(step.time <= duration)) {
      throw std::invalid_argument("Scenario: schedule time outside [0, duration]");
    }
    if (!(step.time > last_time)) {
      throw std::invalid_argument("Scenario: schedule times must be strictly increasing");
    }
    if (!(step.level >= 0.0) || !(step.level <= h_max)) {
      throw std::invalid_argument("Scenario: reference level outside the tank");
    }
    last_time = step.time;
  }
  if (!(initial_level >= 0.0) || !(initial_level <= h_max)) {
    throw std::invalid_argument("Scenario: initial level outside the tank");
  }
  if (!(initial_input >= params.q_in_min) || !(initial_input <= params.q_in_max)) {
    throw std::invalid_argument("Scenario: initial input outside flow bounds");
  }
  if (plant_substeps < 1) throw std::invalid_argument("Scenario: plant_substeps must be >= 1");
  if (!(plant_kv_scale > 0.0)) throw std::invalid_argument("Scenario: plant_kv_scale must be positive");
  if (!(noise_amplitude >= 0.0)) throw std::invalid_argument("Scenario: negative noise amplitude");
}

double Scenario::reference_at(double time) const {
  double level = initial_level;
  for (const ReferenceStep& step : reference_schedule) {
    if (step.time <= time) {
      level = step.level;
    } else {
      break;
    }
  }
  return level;
}

SimTrace run_closed_loop(const Scenario& scenario, Controller& controller,
                         const TankParams& params, std::uint64_t noise_seed) {
  scenario.validate(params);
  const OcpConfig& config = controller.config();
  const double t_s = params.sample_time;
  const double h_max = params.geometry.max_height;
  const int horizon = config.horizon;
  const auto samples = static_cast<int>(std::floor(scenario.duration / t_s + 1e-9));

  TankParams plant = params;
  plant.valve_coeff *= scenario.plant_kv_scale;

  SimTrace trace;
  trace.scenario = scenario;
  trace.sample_time = t_s;
  trace.preview_horizon = horizon;
  trace.flow_min = config.flow_min;
  trace.flow_max = config.flow_max;
  trace.rate_min = config.rate_min;
  trace.rate_max = config.rate_max;
  trace.records.reserve(static_cast<std::size_t>(samples) + 1);

  std::mt19937_64 rng(noise_seed);
  std::uniform_real_distribution<double> noise(-scenario.noise_amplitude,
                                               scenario.noise_amplitude);

  controller.set_previous_input(scenario.initial_input);
  double level = scenario.initial_level;
  double previous_applied = scenario.initial_input;

  for (int k = 0; k <= samples; ++k) {
    const double t = k * t_s;
    double measured = level;
    if (scenario.noise_amplitude > 0.0) measured = clamp(measured + noise(rng), 0.0, h_max);

    ControlStepInput step_input;
    step_input.time = t;
    step_input.measured_level = measured;
    step_input.reference_preview.resize(static_cast<std::size_t>(horizon));
    for (int j = 0; j < horizon; ++j) {
      step_input.reference_preview[static_cast<std::size_t>(j)] =
          scenario.preview ? scenario.reference_at(t + (j + 1) * t_s) : scenario.reference_at(t);
    }

    const ControlResult result = controller.step(step_input);

    StepRecord record;
    record.t = t;
    record.h_ref = scenario.reference_at(t);
    record.h_plant = level;
    record.u = result.input;
    record.du = result.input - previous_applied;
    record.d_hat = result.diagnostics.disturbance;
    record.cost = result.diagnostics.cost;
    record.iterations = result.diagnostics.iterations;
    record.kkt_residual = result.diagnostics.kkt_residual;
    record.solve_time = result.diagnostics.solve_time;
    trace.records.push_back(record);
    previous_applied = result.input;

    if (k == samples) break;

    // Zero-order hold over one sample, RK4 plant truth underneath.
    const double dt = t_s / scenario.plant_substeps;
    for (int i = 1; i <= scenario.plant_substeps; ++i) {
      bool aborted = false;
      try {
        level = rk4_step(plant, level, result.input, dt);
        if (level > h_max) aborted = true;  // physical overflow
      } catch (const std::domain_error&) {
        // The step left the model domain. Near the bottom this is the
        // integrator overshooting an empty tank: clamp and log. Anything
        // else is a genuine escape and aborts the run.
        if (level <= 1e-4) {
          level = 0.0;
          ++trace.clamp_events;
        } else {
          aborted = true;
        }
      }
      if (aborted) {
        trace.status = level >= 0.5 * h_max ? SimStatus::aborted_overflow
                                            : SimStatus::aborted_empty;
        trace.abort_time = t + i * dt;
        trace.metrics = compute_metrics(trace);
        return trace;
      }
    }
  }

  trace.metrics = compute_metrics(trace);
  return trace;
}

SimMetrics compute_metrics(const SimTrace& trace) {
  SimMetrics metrics;
  const double t_s = trace.sample_time;

  double previous_u = trace.scenario.initial_input;
  for (const StepRecord& record : trace.records) {
    const double error = record.h_plant - record.h_ref;
    metrics.ise += error * error * t_s;
    metrics.iae += std::abs(error) * t_s;
    if (record.u < trace.flow_min || record.u > trace.flow_max) {
      ++metrics.input_bound_violations;
    }
    const double du = record.u - previous_u;
    if (du < trace.rate_min || du > trace.rate_max) {
      ++metrics.rate_bound_violations;
    }
    previous_u = record.u;
  }

  // Step events: reference changes strictly inside the run.
  struct Window {
    double start;
    double end;
    double target;
    bool is_event;
    double level_before;
  };
  std::vector<Window> windows;
  const double end_time =
      trace.records.empty() ? 0.0 : trace.records.back().t + 0.5 * t_s;
  double current_ref = trace.scenario.initial_level;
  double window_start = 0.0;
  for (const ReferenceStep& step : trace.scenario.reference_schedule) {
    if (step.time >= end_time) break;
    if (step.time <= 0.0) {
      current_ref = step.level;  // replaces the initial reference, no event
      continue;
    }
    if (step.level == current_ref) continue;
    windows.push_back({window_start, step.time, current_ref, false, 0.0});
    window_start = step.time;
    current_ref = step.level;
  }
  windows.push_back({window_start, end_time, current_ref, false, 0.0});
  for (std::size_t w = 1; w < windows.size(); ++w) {
    windows[w].is_event = true;
    windows[w].level_before = windows[w - 1].target;
  }

  for (std::size_t w = 0; w < windows.size(); ++w) {
    const Window& window = windows[w];
    std::vector<const StepRecord*> rows;
    for (const StepRecord& record : trace.records) {
      if (record.t >= window.start && record.t < window.end) rows.push_back(&record);
    }
    if (rows.empty()) continue;

    // Hold-phase end: interior windows stop where the preview horizon first
    // sees the next reference step, after which the controller deliberately
    // leaves the current reference. Per-event scans use the hold rows only.
    std::size_t hold_size = rows.size();
    if (w + 1 < windows.size() && trace.scenario.preview) {
      const double cutoff = window.end - (trace.preview_horizon + 1) * t_s;
      while (hold_size > 1 && rows[hold_size - 1]->t >= cutoff) --hold_size;
    }
    metrics.window_end_errors.push_back(
        std::abs(rows[hold_size - 1]->h_plant - window.target));
    if (!window.is_event) continue;

    EventMetrics event;
    event.time = window.start;
    event.level_before = window.level_before;
    event.level_target = window.target;
    const bool upward = window.target > window.level_before;
    for (std::size_t i = 0; i < hold_size; ++i) {
      if (upward) {
        event.overshoot = std::max(event.overshoot, rows[i]->h_plant - window.target);
      } else {
        event.undershoot = std::max(event.undershoot, window.target - rows[i]->h_plant);
      }
    }
    event.overshoot = std::max(event.overshoot, 0.0);
    event.undershoot = std::max(event.undershoot, 0.0);

    for (std::size_t i = 0; i < hold_size; ++i) {
      bool stays = true;
      for (std::size_t j = i; j < hold_size; ++j) {
        if (std::abs(rows[j]->h_plant - window.target) >= 0.01) {
          stays = false;
          break;
        }
      }
      if (stays) {
        event.settling_time = rows[i]->t - window.start;
        event.settled = true;
        break;
      }
    }
    metrics.max_overshoot = std::max(metrics.max_overshoot, event.overshoot);
    metrics.max_undershoot = std::max(metrics.max_undershoot, event.undershoot);
    metrics.events.push_back(event);
  }
  return metrics;
}

void write_trace_csv(const SimTrace& trace, std::ostream& out) {
  out << "t,h_ref,h_plant,u,du,d_hat,cost,sqp_iters,kkt_residual,solve_time_s\n";
  for (const StepRecord& record : trace.records) {
    write_csv_value(out, record.t);
    out << ',';
    write_csv_value(out, record.h_ref);
    out << ',';
    write_csv_value(out, record.h_plant);
    out << ',';
    write_csv_value(out, record.u);
    out << ',';
    write_csv_value(out, record.du);
    out << ',';
    write_csv_value(out, record.d_hat);
    out << ',';
    write_csv_value(out, record.cost);
    out << ',' << record.iterations << ',';
    write_csv_value(out, record.kkt_residual);
    out << ',';
    write_csv_value(out, record.solve_time);
    out << '\n';
  }
}

}  // namespace tankmpc
