#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "tankmpc/controllers.hpp"
#include "tankmpc/run_config.hpp"
#include "tankmpc/sim_harness.hpp"

namespace {

namespace fs = std::filesystem;
using namespace tankmpc;

constexpr int kExitOk = 0;
constexpr int kExitConfigError = 2;
constexpr int kExitSimAborted = 3;

struct RunOutcome {
  std::string name;
  SimTrace trace;
};

std::unique_ptr<Controller> make_controller(const std::string& name, const RunConfig& config) {
  if (name == "lmpc") {
    return std::make_unique<LmpcController>(config.tank, config.lmpc.ocp,
                                            config.linearization_level,
                                            config.lmpc.estimator_gain,
                                            config.scenario.initial_input);
  }
  return std::make_unique<NmpcController>(config.tank, config.nmpc.ocp,
                                          config.nmpc.estimator_gain,
                                          config.scenario.initial_input);
}

const char* status_name(SimStatus status) {
  switch (status) {
    case SimStatus::completed: return "completed";
    case SimStatus::aborted_empty: return "aborted (tank empty)";
    case SimStatus::aborted_overflow: return "aborted (tank overflow)";
  }
  return "unknown";
}

void print_summary(std::ostream& out, const std::vector<RunOutcome>& runs) {
  char line[256];
  out << "controller      ISE        IAE   max_under   max_over  input_viol  status\n";
  for (const RunOutcome& run : runs) {
    const SimMetrics& m = run.trace.metrics;
    std::snprintf(line, sizeof(line), "%-10s %9.5f  %9.5f   %9.5f  %9.5f  %10d  %s\n",
                  run.name.c_str(), m.ise, m.iae, m.max_undershoot, m.max_overshoot,
                  m.input_bound_violations + m.rate_bound_violations,
                  status_name(run.trace.status));
    out << line;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Closed-loop level control of a conical storage tank: linear and "
               "nonlinear model predictive control with a shared QP/SQP stack"};

  std::string config_path = "default";
  std::string controller_choice = "both";
  std::string output_dir = "out";
  int horizon_override = -1;
  std::uint64_t seed_override = 0;
  bool seed_given = false;
  bool dump_default = false;

  app.add_option("--config", config_path,
                 "config file path, or 'default' for built-in defaults");
  app.add_option("--controller", controller_choice, "controller to run")
      ->check(CLI::IsMember({"lmpc", "nmpc", "both"}));
  app.add_option("--output", output_dir, "output directory for traces and summary");
  app.add_option("--horizon", horizon_override, "override the prediction horizon N")
      ->check(CLI::PositiveNumber);
  app.add_option("--seed", seed_override, "override the noise seed")
      ->trigger_on_parse()
      ->each([&](const std::string&) { seed_given = true; });
  app.add_flag("--dump-default-config", dump_default,
               "print the default config as JSON and exit");

  CLI11_PARSE(app, argc, argv);

  if (dump_default) {
    std::cout << run_config_to_json(default_run_config()).dump(2) << "\n";
    return kExitOk;
  }

  RunConfig config;
  try {
    config = (config_path == "default") ? default_run_config() : load_run_config(config_path);
    if (horizon_override > 0) {
      config.lmpc.ocp.horizon = horizon_override;
      config.nmpc.ocp.horizon = horizon_override;
    }
    if (seed_given) config.seed = seed_override;
    config.validate();
  } catch (const std::exception& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfigError;
  }

  std::vector<std::string> names;
  if (controller_choice == "both") {
    names = {"lmpc", "nmpc"};
  } else {
    names = {controller_choice};
  }

  std::error_code ec;
  fs::create_directories(output_dir, ec);
  if (ec) {
    std::cerr << "cannot create output directory " << output_dir << ": " << ec.message() << "\n";
    return kExitConfigError;
  }

  std::vector<RunOutcome> runs;
  bool any_aborted = false;
  for (const std::string& name : names) {
    std::unique_ptr<Controller> controller = make_controller(name, config);
    SimTrace trace = run_closed_loop(config.scenario, *controller, config.tank, config.seed);
    if (trace.status != SimStatus::completed) {
      any_aborted = true;
      std::cerr << name << ": simulation " << status_name(trace.status) << " at t = "
                << trace.abort_time << " s; partial trace written\n";
    }

    const fs::path trace_path = fs::path(output_dir) / ("trace_" + name + ".csv");
    std::ofstream trace_file(trace_path);
    if (!trace_file) {
      std::cerr << "cannot write " << trace_path.string() << "\n";
      return kExitConfigError;
    }
    write_trace_csv(trace, trace_file);
    std::cout << name << ": wrote " << trace_path.string() << " (" << trace.records.size()
              << " rows)\n";
    runs.push_back({name, std::move(trace)});
  }

  print_summary(std::cout, runs);
  const fs::path summary_path = fs::path(output_dir) / "summary.txt";
  std::ofstream summary_file(summary_path);
  if (!summary_file) {
    std::cerr << "cannot write " << summary_path.string() << "\n";
    return kExitConfigError;
  }
  print_summary(summary_file, runs);

  return any_aborted ? kExitSimAborted : kExitOk;
}
