#include "tankmpc/run_config.hpp"

#include <fstream>
#include <stdexcept>

namespace tankmpc {

namespace {

using nlohmann::json;

json sqp_to_json(const SqpSettings& sqp) {
  return json{{"max_iterations", sqp.max_iterations},
              {"kkt_tol", sqp.kkt_tol},
              {"merit_penalty", sqp.merit_penalty},
              {"armijo_c", sqp.armijo_c},
              {"backtrack_factor", sqp.backtrack_factor},
              {"max_backtracks", sqp.max_backtracks}};
}

SqpSettings sqp_from_json(const json& j) {
  SqpSettings sqp;
  sqp.max_iterations = j.at("max_iterations").get<int>();
  sqp.kkt_tol = j.at("kkt_tol").get<double>();
  sqp.merit_penalty = j.at("merit_penalty").get<double>();
  sqp.armijo_c = j.at("armijo_c").get<double>();
  sqp.backtrack_factor = j.at("backtrack_factor").get<double>();
  sqp.max_backtracks = j.at("max_backtracks").get<int>();
  return sqp;
}

json controller_to_json(const ControllerConfig& config) {
  const OcpConfig& ocp = config.ocp;
  return json{{"horizon", ocp.horizon},
              {"weight_tracking", ocp.weight_tracking},
              {"weight_increment", ocp.weight_increment},
              {"level_min", ocp.level_min},
              {"level_max", ocp.level_max},
              {"flow_min", ocp.flow_min},
              {"flow_max", ocp.flow_max},
              {"rate_min", ocp.rate_min},
              {"rate_max", ocp.rate_max},
              {"soft_level_penalty", ocp.soft_level_penalty},
              {"estimator_gain", config.estimator_gain},
              {"sqp", sqp_to_json(ocp.sqp)}};
}

ControllerConfig controller_from_json(const json& j) {
  ControllerConfig config;
  config.ocp.horizon = j.at("horizon").get<int>();
  config.ocp.weight_tracking = j.at("weight_tracking").get<double>();
  config.ocp.weight_increment = j.at("weight_increment").get<double>();
  config.ocp.level_min = j.at("level_min").get<double>();
  config.ocp.level_max = j.at("level_max").get<double>();
  config.ocp.flow_min = j.at("flow_min").get<double>();
  config.ocp.flow_max = j.at("flow_max").get<double>();
  config.ocp.rate_min = j.at("rate_min").get<double>();
  config.ocp.rate_max = j.at("rate_max").get<double>();
  config.ocp.soft_level_penalty = j.at("soft_level_penalty").get<double>();
  config.estimator_gain = j.at("estimator_gain").get<double>();
  config.ocp.sqp = sqp_from_json(j.at("sqp"));
  return config;
}

}  // namespace

void RunConfig::validate() const {
  tank.validate();
  if (!(linearization_level > 0.0) || !(linearization_level <= tank.geometry.max_height)) {
    throw std::invalid_argument("RunConfig: linearization_level outside (0, h_max]");
  }
  lmpc.ocp.validate();
  nmpc.ocp.validate();
  for (double gain : {lmpc.estimator_gain, nmpc.estimator_gain}) {
    if (!(gain >= 0.0) || !(gain <= 1.0)) {
      throw std::invalid_argument("RunConfig: estimator_gain outside [0, 1]");
    }
  }
  scenario.validate(tank);
}

RunConfig default_run_config() {
  RunConfig config;
  config.tank = TankParams{};  // reference tank parameters
  config.linearization_level = 0.4;

  OcpConfig ocp;
  ocp.flow_min = config.tank.q_in_min;
  ocp.flow_max = config.tank.q_in_max;
  ocp.level_max = config.tank.geometry.max_height;
  config.lmpc.ocp = ocp;
  config.nmpc.ocp = ocp;

  config.scenario.duration = 400.0;
  config.scenario.initial_level = 0.4;
  config.scenario.initial_input = steady_state_flow(config.tank, 0.4);
  config.scenario.reference_schedule = {{0.0, 0.4}, {50.0, 0.8}, {350.0, 0.15}};
  return config;
}

nlohmann::json run_config_to_json(const RunConfig& config) {
  json schedule = json::array();
  for (const ReferenceStep& step : config.scenario.reference_schedule) {
    schedule.push_back(json{{"time", step.time}, {"level", step.level}});
  }
  return json{
      {"tank",
       {{"upper_radius", config.tank.geometry.upper_radius},
        {"bottom_radius", config.tank.geometry.bottom_radius},
        {"max_height", config.tank.geometry.max_height},
        {"valve_coeff", config.tank.valve_coeff},
        {"q_in_min", config.tank.q_in_min},
        {"q_in_max", config.tank.q_in_max},
        {"sample_time", config.tank.sample_time}}},
      {"linearization_level", config.linearization_level},
      {"lmpc", controller_to_json(config.lmpc)},
      {"nmpc", controller_to_json(config.nmpc)},
      {"scenario",
       {{"duration", config.scenario.duration},
        {"initial_level", config.scenario.initial_level},
        {"initial_input", config.scenario.initial_input},
        {"plant_substeps", config.scenario.plant_substeps},
        {"plant_kv_scale", config.scenario.plant_kv_scale},
        {"preview", config.scenario.preview},
        {"noise_amplitude", config.scenario.noise_amplitude},
        {"reference_schedule", schedule}}},
      {"seed", config.seed}};
}

RunConfig run_config_from_json(const nlohmann::json& j) {
  RunConfig config;
  const json& tank = j.at("tank");
  config.tank.geometry.upper_radius = tank.at("upper_radius").get<double>();
  config.tank.geometry.bottom_radius = tank.at("bottom_radius").get<double>();
  config.tank.geometry.max_height = tank.at("max_height").get<double>();
  config.tank.valve_coeff = tank.at("valve_coeff").get<double>();
  config.tank.q_in_min = tank.at("q_in_min").get<double>();
  config.tank.q_in_max = tank.at("q_in_max").get<double>();
  config.tank.sample_time = tank.at("sample_time").get<double>();

  config.linearization_level = j.at("linearization_level").get<double>();
  config.lmpc = controller_from_json(j.at("lmpc"));
  config.nmpc = controller_from_json(j.at("nmpc"));

  const json& scenario = j.at("scenario");
  config.scenario.duration = scenario.at("duration").get<double>();
  config.scenario.initial_level = scenario.at("initial_level").get<double>();
  config.scenario.initial_input = scenario.at("initial_input").get<double>();
  config.scenario.plant_substeps = scenario.at("plant_substeps").get<int>();
  config.scenario.plant_kv_scale = scenario.at("plant_kv_scale").get<double>();
  config.scenario.preview = scenario.at("preview").get<bool>();
  config.scenario.noise_amplitude = scenario.at("noise_amplitude").get<double>();
  config.scenario.reference_schedule.clear();
  for (const json& step : scenario.at("reference_schedule")) {
    config.scenario.reference_schedule.push_back(
        {step.at("time").get<double>(), step.at("level").get<double>()});
  }
  config.seed = j.at("seed").get<std::uint64_t>();
  return config;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream file(path);
  if (!file) {
    throw std::runtime_error("cannot open config file: " + path);
  }
  json j;
  try {
    file >> j;
  } catch (const json::parse_error& e) {
    throw std::runtime_error("config parse error in " + path + ": " + e.what());
  }
  try {
    RunConfig config = run_config_from_json(j);
    config.validate();
    return config;
  } catch (const json::exception& e) {
    throw std::runtime_error("config schema error in " + path + ": " + e.what());
  } catch (const std::invalid_argument& e) {
    throw std::runtime_error("config invariant violation in " + path + ": " + e.what());
  }
}

}  // namespace tankmpc
