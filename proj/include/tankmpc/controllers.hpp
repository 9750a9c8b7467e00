#pragma once

#include <optional>
#include <string>
#include <vector>

#include "tankmpc/nmpc_solver.hpp"
#include "tankmpc/qp_solver.hpp"
#include "tankmpc/tank_model.hpp"

namespace tankmpc {

/// Sample handed to a controller: the level measurement and the reference
/// previewed over the horizon (r_k is the level wanted at t + (k+1) T_s).
struct ControlStepInput {
  double measured_level = 0.0;
  std::vector<double> reference_preview;
  double time = 0.0;
};

/// First-order output-disturbance observer. The estimate converges to the
/// constant offset between plant and design model, which is what makes both
/// controllers offset-free under model mismatch.
struct EstimatorState {
  double disturbance = 0.0;
  double gain = 0.5;                   // 0 disables, 1 is deadbeat
  double last_model_prediction = 0.0;
  bool has_prediction = false;
  double clamp_abs = 2.0;              // sanity bound, tank height
};

/// d+ = d + L (h_m - h_model - d), clamped to +-clamp_abs.
EstimatorState estimator_update(const EstimatorState& state, double measured_level,
                                double model_prediction);

// Active-constraint flag bits for diagnostics.
inline constexpr unsigned kActiveInputLow = 1u << 0;
inline constexpr unsigned kActiveInputHigh = 1u << 1;
inline constexpr unsigned kActiveRateLow = 1u << 2;
inline constexpr unsigned kActiveRateHigh = 1u << 3;
inline constexpr unsigned kActiveLevelLow = 1u << 4;
inline constexpr unsigned kActiveLevelHigh = 1u << 5;

struct ControllerDiagnostics {
  double solve_time = 0.0;  // seconds
  int iterations = 0;
  double cost = 0.0;
  double kkt_residual = 0.0;
  unsigned active_constraints = 0;
  double disturbance = 0.0;  // estimate used for this step
  bool solver_failure = false;
  bool fallback_hold = false;
};

struct ControlResult {
  double input = 0.0;
  ControllerDiagnostics diagnostics;
};

/// Receding-horizon controller: solve the horizon problem, apply the first
/// input, keep the shifted solution as the next warm start. Instances are
/// stateful values; copy one to fork an identical controller.
class Controller {
 public:
  virtual ~Controller() = default;
  virtual ControlResult step(const ControlStepInput& input) = 0;
  virtual std::string name() const = 0;
  virtual const OcpConfig& config() const = 0;
  virtual double disturbance_estimate() const = 0;
  virtual double previous_input() const = 0;
  virtual void set_previous_input(double input) = 0;
};

/// Condensed QP of the linear MPC around the model's operating point, in
/// deviation variables stacked as [inputs; level slacks]. The measured state
/// and the reference are both corrected by the output-disturbance estimate.
/// All bounds are shifted by the operating point.
QuadProgram lmpc_build_qp(const LinearTankModel& model, const OcpConfig& config,
                          const ControlStepInput& step, double previous_input,
                          double disturbance_estimate);

class LmpcController final : public Controller {
 public:
  LmpcController(const TankParams& params, const OcpConfig& config, double linearization_level,
                 double estimator_gain, double initial_input);

  ControlResult step(const ControlStepInput& input) override;
  std::string name() const override { return "lmpc"; }
  const OcpConfig& config() const override { return config_; }
  double disturbance_estimate() const override { return estimator_.disturbance; }
  double previous_input() const override { return previous_input_; }
  void set_previous_input(double input) override { previous_input_ = input; }
  const LinearTankModel& model() const { return model_; }
  void clear_warm_start() { warm_start_.reset(); }

 private:
  TankParams params_;
  OcpConfig config_;
  LinearTankModel model_;
  EstimatorState estimator_;
  double previous_input_ = 0.0;
  std::optional<Eigen::VectorXd> warm_start_;
};

class NmpcController final : public Controller {
 public:
  NmpcController(const TankParams& params, const OcpConfig& config, double estimator_gain,
                 double initial_input);

  ControlResult step(const ControlStepInput& input) override;
  std::string name() const override { return "nmpc"; }
  const OcpConfig& config() const override { return config_; }
  double disturbance_estimate() const override { return estimator_.disturbance; }
  double previous_input() const override { return previous_input_; }
  void set_previous_input(double input) override { previous_input_ = input; }
  void clear_warm_start() { warm_start_.reset(); }

 private:
  TankParams params_;
  OcpConfig config_;
  EstimatorState estimator_;
  double previous_input_ = 0.0;
  std::optional<OcpSolution> warm_start_;
};

}  // namespace tankmpc
