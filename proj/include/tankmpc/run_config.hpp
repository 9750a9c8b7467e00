#pragma once

#include <cstdint>
#include <string>

#include <json.hpp>

#include "tankmpc/nmpc_solver.hpp"
#include "tankmpc/sim_harness.hpp"
#include "tankmpc/tank_model.hpp"

namespace tankmpc {

struct ControllerConfig {
  OcpConfig ocp;
  double estimator_gain = 0.5;
};

/// Everything one experiment needs, loadable from a single JSON file.
/// Defaults reproduce the reference tank and the 400 s two-step scenario.
struct RunConfig {
  TankParams tank;
  double linearization_level = 0.4;
  ControllerConfig lmpc;
  ControllerConfig nmpc;
  Scenario scenario;
  std::uint64_t seed = 0;

  void validate() const;
};

RunConfig default_run_config();

nlohmann::json run_config_to_json(const RunConfig& config);
RunConfig run_config_from_json(const nlohmann::json& j);

/// Parse a config file; throws std::runtime_error with a descriptive message
/// on missing files, malformed JSON, unknown schema or invariant violations.
RunConfig load_run_config(const std::string& path);

}  // namespace tankmpc
