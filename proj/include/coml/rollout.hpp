#pragma once

#include <Eigen/Core>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "coml/ad/tape.hpp"
#include "coml/controllers.hpp"
#include "coml/nn.hpp"
#include "coml/pfar.hpp"
#include "coml/trajgen.hpp"

namespace coml::rollout {

using pfar::State;
using pfar::Vec3;
using pfar::Vec6;

enum class ControlMode {
  kContinuous,     // control law evaluated inside every RK4 stage
  kZeroOrderHold,  // control computed at the control rate and held
};

std::string to_string(ControlMode mode);
ControlMode parse_control_mode(const std::string& s);

struct RolloutConfig {
  double dt = 0.01;            // s
  double horizon = 5.0;        // s
  double control_rate = 100.0; // Hz
  double alpha = 1e-3;         // control-effort weight
  ControlMode mode = ControlMode::kContinuous;
  // Any state entry beyond this magnitude counts as divergence.
  double divergence_bound = 1e6;

  void validate() const;
  std::size_t steps() const;       // horizon / dt
  std::size_t hold_steps() const;  // integration steps per control period
};

// Classic fixed-step RK4 on a plain vector ODE.
using OdeFn = std::function<Eigen::VectorXd(double, const Eigen::VectorXd&)>;
Eigen::VectorXd rk4_step(const OdeFn& f, double t, const Eigen::VectorXd& x,
                         double dt);
Eigen::VectorXd rk4_integrate(const OdeFn& f, double t0,
                              const Eigen::VectorXd& x0, double dt,
                              std::size_t steps);

// State derivative of the controlled system for a given input.
using PlantFn = std::function<Vec6(const State&, const Vec3&)>;

// Samples at every integration step k = 0..N.
struct PlantLog {
  std::vector<double> t;
  std::vector<Vec6> x;
  std::vector<Vec6> r;
  std::vector<Vec3> u;
  std::vector<double> integrand;  // |x - r|^2 + alpha |u|^2
  double loss = 0.0;              // (1/T) integral of the integrand (RK4)
};

// Closed loop of a plant and a controller with internal state, integrated as
// one augmented ODE (x, z, cost). Starts at x(0) = r(0), z(0) = 0.
// Throws DivergenceError when the state becomes non-finite or exceeds the
// divergence bound.
PlantLog simulate_closed_loop(const PlantFn& plant,
                              const control::Controller& controller,
                              const trajgen::ReferenceTrajectory& ref,
                              const RolloutConfig& cfg);

// Ground-truth plant under wind with zero-order-hold control.
PlantLog simulate_plant(const pfar::WindField& wind,
                        const control::Controller& controller,
                        const trajgen::ReferenceTrajectory& ref,
                        RolloutConfig cfg);

struct TrackingMetrics {
  double rms_error = 0.0;   // rms of x - r
  double rms_effort = 0.0;  // rms of u
};
TrackingMetrics tracking_metrics(const PlantLog& log);

// Trapezoidal (1/T) integral of the logged integrand.
double trapezoid_loss(const PlantLog& log);

// ---------------------------------------------------------------------------
// Differentiable rollouts on a tape.

// Taped adaptive-controller parameters. Gains are [3, 3] SPD matrices.
struct DiffController {
  std::span<const ad::Var> features;  // one Var per feature-network tensor
  const nn::Mlp* feature_shape = nullptr;
  ad::Var input_scale;
  ad::Var lambda, k, gamma;
};

// Batched model dynamics: x [B, 6], u [B, 3] -> xdot [B, 6].
using DiffPlant = std::function<ad::Var(ad::Var x, ad::Var u)>;

struct DiffRollout {
  ad::Var cost;                 // [B, 1], (1/T) integral per row
  std::vector<ad::Tensor> x;    // optional per-step states [B, 6]
  std::vector<ad::Tensor> a;    // optional per-step adapted params [B, 3p]
};

// Simulates every reference in `refs` as one batch row. All references must
// share the configured horizon (they may be longer). Non-finite values raise
// DivergenceError carrying the simulation time.
DiffRollout simulate(ad::Tape& tape, const DiffPlant& plant,
                     const DiffController& ctrl,
                     std::span<const trajgen::ReferenceTrajectory* const> refs,
                     const RolloutConfig& cfg, bool keep_states = false);

// Batched controller evaluation, exposed for testing: returns u [B, 3] and
// Adot [B, 3p] for state x [B, 6], adapted A [B, 3p] and reference rows
// qd, qdotd, qddotd [B, 3].
struct DiffControl {
  ad::Var u;
  ad::Var a_dot;
};
DiffControl diff_adaptive_control(const DiffController& ctrl, ad::Var x,
                                  ad::Var a, ad::Var qd, ad::Var qdotd,
                                  ad::Var qddotd);

}  // namespace coml::rollout
