#include "coml/rollout.hpp"

#include <cmath>

#include "coml/errors.hpp"
#include "coml/metrics.hpp"

namespace coml::rollout {

namespace {

std::size_t checked_ratio(double num, double den, const char* what) {
  const double r = num / den;
  const double n = std::round(r);
  if (!(n >= 1.0) || std::abs(r - n) > 1e-9 * std::max(1.0, n)) {
    throw ConfigError(std::string(what) + " must be a positive multiple of dt");
  }
  return static_cast<std::size_t>(n);
}

}  // namespace

std::string to_string(ControlMode mode) {
  return mode == ControlMode::kContinuous ? "continuous" : "hold";
}

ControlMode parse_control_mode(const std::string& s) {
  if (s == "continuous") return ControlMode::kContinuous;
  if (s == "hold") return ControlMode::kZeroOrderHold;
  throw ConfigError("unknown control mode '" + s + "' (continuous|hold)");
}

void RolloutConfig::validate() const {
  if (!(dt > 0.0)) throw ConfigError("dt must be > 0");
  if (!(horizon > 0.0)) throw ConfigError("horizon must be > 0");
  if (!(control_rate > 0.0)) throw ConfigError("control rate must be > 0");
  if (!(alpha >= 0.0)) throw ConfigError("alpha must be >= 0");
  steps();
  hold_steps();
}

std::size_t RolloutConfig::steps() const {
  return checked_ratio(horizon, dt, "horizon");
}

std::size_t RolloutConfig::hold_steps() const {
  return checked_ratio(1.0 / control_rate, dt, "control period");
}

Eigen::VectorXd rk4_step(const OdeFn& f, double t, const Eigen::VectorXd& x,
                         double dt) {
  const Eigen::VectorXd k1 = f(t, x);
  const Eigen::VectorXd k2 = f(t + 0.5 * dt, x + (0.5 * dt) * k1);
  const Eigen::VectorXd k3 = f(t + 0.5 * dt, x + (0.5 * dt) * k2);
  const Eigen::VectorXd k4 = f(t + dt, x + dt * k3);
  return x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

Eigen::VectorXd rk4_integrate(const OdeFn& f, double t0,
                              const Eigen::VectorXd& x0, double dt,
                              std::size_t steps) {
  Eigen::VectorXd x = x0;
  for (std::size_t k = 0; k < steps; ++k)
    x = rk4_step(f, t0 + static_cast<double>(k) * dt, x, dt);
  return x;
}

PlantLog simulate_closed_loop(const PlantFn& plant,
                              const control::Controller& controller,
                              const trajgen::ReferenceTrajectory& ref,
                              const RolloutConfig& cfg) {
  cfg.validate();
  const std::size_t n = cfg.steps();
  const std::size_t hold = cfg.hold_steps();
  const std::size_t nz = controller.state_size();
  const Eigen::Index dim = static_cast<Eigen::Index>(6 + nz + 1);
  const bool zoh = cfg.mode == ControlMode::kZeroOrderHold;

  auto ref_state = [](const trajgen::RefPoint& r) {
    Vec6 v;
    v << r.q, r.qdot;
    return v;
  };

  Vec3 held = Vec3::Zero();
  const OdeFn deriv = [&](double t, const Eigen::VectorXd& s) {
    const State x = State::from_stacked(s.head<6>());
    const trajgen::RefPoint r = ref.evaluate(t);
    Eigen::VectorXd ds(dim);
    std::span<const double> z(s.data() + 6, nz);
    std::span<double> zdot(ds.data() + 6, nz);
    Vec3 u;
    if (zoh) {
      controller.state_rate(x, r, z, zdot);
      u = held;
    } else {
      u = controller.control_and_rate(x, r, z, zdot);
    }
    ds.head<6>() = plant(x, u);
    ds[dim - 1] = (s.head<6>() - ref_state(r)).squaredNorm() +
                  cfg.alpha * u.squaredNorm();
    return ds;
  };

  PlantLog log;
  log.t.reserve(n + 1);
  log.x.reserve(n + 1);
  log.r.reserve(n + 1);
  log.u.reserve(n + 1);
  log.integrand.reserve(n + 1);

  Eigen::VectorXd s = Eigen::VectorXd::Zero(dim);
  s.head<6>() = ref_state(ref.evaluate(0.0));

  for (std::size_t k = 0;; ++k) {
    const double t = static_cast<double>(k) * cfg.dt;
    const State x = State::from_stacked(s.head<6>());
    const trajgen::RefPoint r = ref.evaluate(t);
    std::span<const double> z(s.data() + 6, nz);
    if (!zoh || k % hold == 0) held = controller.control(x, r, z);
    const Vec6 rs = ref_state(r);
    log.t.push_back(t);
    log.x.push_back(s.head<6>());
    log.r.push_back(rs);
    log.u.push_back(held);
    log.integrand.push_back((s.head<6>() - rs).squaredNorm() +
                            cfg.alpha * held.squaredNorm());
    if (k == n) break;

    s = rk4_step(deriv, t, s, cfg.dt);
    const double tn = static_cast<double>(k + 1) * cfg.dt;
    if (!s.allFinite()) throw DivergenceError("closed loop diverged", tn);
    if (s.head(dim - 1).cwiseAbs().maxCoeff() > cfg.divergence_bound) {
      throw DivergenceError("closed-loop state exceeded bound", tn);
    }
  }
  log.loss = s[dim - 1] / cfg.horizon;
  return log;
}

PlantLog simulate_plant(const pfar::WindField& wind,
                        const control::Controller& controller,
                        const trajgen::ReferenceTrajectory& ref,
                        RolloutConfig cfg) {
  wind.validate();
  cfg.mode = ControlMode::kZeroOrderHold;
  const PlantFn plant = [&wind](const State& x, const Vec3& u) {
    return pfar::true_dynamics(x, u, wind);
  };
  return simulate_closed_loop(plant, controller, ref, cfg);
}

TrackingMetrics tracking_metrics(const PlantLog& log) {
  std::vector<Vec6> err(log.x.size());
  for (std::size_t k = 0; k < err.size(); ++k) err[k] = log.x[k] - log.r[k];
  return {rms(err), rms(log.u)};
}

double trapezoid_loss(const PlantLog& log) {
  double s = 0.0;
  for (std::size_t k = 0; k + 1 < log.t.size(); ++k)
    s += 0.5 * (log.t[k + 1] - log.t[k]) * (log.integrand[k] + log.integrand[k + 1]);
  return s / (log.t.back() - log.t.front());
}

// ---------------------------------------------------------------------------

DiffControl diff_adaptive_control(const DiffController& ctrl, ad::Var x,
                                  ad::Var a, ad::Var qd, ad::Var qdotd,
                                  ad::Var qddotd) {
  ad::Tape& tape = *x.tape();
  const ad::Var q = ad::slice(x, 0, 3);
  const ad::Var qdot = ad::slice(x, 3, 6);
  const ad::Var e = q - qd;
  const ad::Var edot = qdot - qdotd;
  // Row-vector convention: (M v)^T = v^T M^T.
  const ad::Var s = edot + ad::matmul(e, ad::transpose(ctrl.lambda));
  const ad::Var vdot = qddotd - ad::matmul(edot, ad::transpose(ctrl.lambda));
  const ad::Var y = nn::forward(ctrl.features, *ctrl.feature_shape,
                                ctrl.input_scale, x);
  DiffControl out;
  out.a_dot = ad::batch_outer(ad::matmul(s, ad::transpose(ctrl.gamma)), y);
  const ad::Var g = tape.constant(ad::Tensor::vector({0.0, pfar::kGravity, 0.0}));
  const ad::Var f = vdot + g - ad::batch_matvec(a, y) -
                    ad::matmul(s, ad::transpose(ctrl.k));
  out.u = ad::rotate(ad::slice(x, 2, 3), f, true);
  return out;
}

DiffRollout simulate(ad::Tape& tape, const DiffPlant& plant,
                     const DiffController& ctrl,
                     std::span<const trajgen::ReferenceTrajectory* const> refs,
                     const RolloutConfig& cfg, bool keep_states) {
  cfg.validate();
  if (refs.empty()) throw Error("rollout needs at least one reference");
  for (const auto* r : refs) {
    if (r->duration() + 1e-9 < cfg.horizon) {
      throw ConfigError("reference shorter than the rollout horizon");
    }
  }
  const std::size_t batch = refs.size();
  const std::size_t n = cfg.steps();
  const std::size_t hold = cfg.hold_steps();
  const std::size_t p = ctrl.feature_shape->output_size();
  const double dt = cfg.dt;
  const bool zoh = cfg.mode == ControlMode::kZeroOrderHold;

  struct RefVars {
    ad::Var qd, qdotd, qddotd, r;
  };
  auto ref_at = [&](double t) {
    ad::Tensor qd(ad::Shape{batch, 3}), qv(ad::Shape{batch, 3}),
        qa(ad::Shape{batch, 3}), rr(ad::Shape{batch, 6});
    for (std::size_t b = 0; b < batch; ++b) {
      const trajgen::RefPoint rp = refs[b]->evaluate(t);
      for (std::size_t c = 0; c < 3; ++c) {
        qd.at(b, c) = rp.q[c];
        qv.at(b, c) = rp.qdot[c];
        qa.at(b, c) = rp.qddot[c];
        rr.at(b, c) = rp.q[c];
        rr.at(b, c + 3) = rp.qdot[c];
      }
    }
    return RefVars{tape.constant(std::move(qd)), tape.constant(std::move(qv)),
                   tape.constant(std::move(qa)), tape.constant(std::move(rr))};
  };

  struct Deriv {
    ad::Var x, a, c;
  };
  ad::Var held;
  auto stage = [&](const RefVars& rv, ad::Var x, ad::Var a) {
    const DiffControl dc =
        diff_adaptive_control(ctrl, x, a, rv.qd, rv.qdotd, rv.qddotd);
    const ad::Var u = zoh ? held : dc.u;
    const ad::Var xdot = plant(x, u);
    const ad::Var cdot = ad::sum_rows(ad::square(x - rv.r)) +
                         cfg.alpha * ad::sum_rows(ad::square(u));
    return Deriv{xdot, dc.a_dot, cdot};
  };

  DiffRollout out;
  double t = 0.0;
  try {
    RefVars r0 = ref_at(0.0);
    ad::Var x = r0.r;
    ad::Var a = tape.constant(ad::Tensor(ad::Shape{batch, 3 * p}, 0.0));
    ad::Var c = tape.constant(ad::Tensor(ad::Shape{batch, 1}, 0.0));
    if (keep_states) {
      out.x.push_back(x.value());
      out.a.push_back(a.value());
    }
    for (std::size_t k = 0; k < n; ++k) {
      t = static_cast<double>(k) * dt;
      const RefVars rm = ref_at(t + 0.5 * dt);
      const RefVars r1 = ref_at(static_cast<double>(k + 1) * dt);
      if (zoh && k % hold == 0) {
        held = diff_adaptive_control(ctrl, x, a, r0.qd, r0.qdotd, r0.qddotd).u;
      }
      const Deriv k1 = stage(r0, x, a);
      const Deriv k2 = stage(rm, x + (0.5 * dt) * k1.x, a + (0.5 * dt) * k1.a);
      const Deriv k3 = stage(rm, x + (0.5 * dt) * k2.x, a + (0.5 * dt) * k2.a);
      const Deriv k4 = stage(r1, x + dt * k3.x, a + dt * k3.a);
      const double w = dt / 6.0;
      x = x + w * (k1.x + 2.0 * k2.x + 2.0 * k3.x + k4.x);
      a = a + w * (k1.a + 2.0 * k2.a + 2.0 * k3.a + k4.a);
      c = c + w * (k1.c + 2.0 * k2.c + 2.0 * k3.c + k4.c);
      for (double v : x.value().values()) {
        if (std::abs(v) > cfg.divergence_bound) {
          throw DivergenceError("rollout state exceeded bound",
                                static_cast<double>(k + 1) * dt);
        }
      }
      if (keep_states) {
        out.x.push_back(x.value());
        out.a.push_back(a.value());
      }
      r0 = r1;
    }
    out.cost = c * (1.0 / cfg.horizon);
  } catch (const NonFiniteError& e) {
    throw DivergenceError(std::string("rollout diverged: ") + e.what(), t);
  }
  return out;
}

}  // namespace coml::rollout
