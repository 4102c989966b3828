#pragma once

#include <Eigen/Core>
#include <array>
#include <functional>
#include <span>

#include "coml/ad/tape.hpp"
#include "coml/nn.hpp"
#include "coml/pfar.hpp"
#include "coml/trajgen.hpp"

namespace coml::control {

using pfar::Mat3;
using pfar::State;
using pfar::Vec3;
using trajgen::RefPoint;

inline constexpr std::size_t kCholeskyParams = 6;

// Unconstrained encoding of a 3x3 SPD matrix: Q = L L^T with
// L = [[e^p0, 0, 0], [p1, e^p2, 0], [p3, p4, e^p5]].
using CholeskyParams = std::array<double, kCholeskyParams>;

Mat3 spd_from_log_cholesky(const CholeskyParams& p);
// Taped version; `p` has shape [6], result [3, 3].
ad::Var spd_from_log_cholesky(ad::Var p);

struct Gains {
  Mat3 lambda = Mat3::Identity();
  Mat3 k = Mat3::Identity();
  Mat3 gamma = Mat3::Identity();
};

struct GainParams {
  CholeskyParams lambda{};
  CholeskyParams k{};
  CholeskyParams gamma{};
};

Gains gains_from_log_cholesky(const GainParams& p);

struct TrackingSignals {
  Vec3 q_err;     // q - q_d
  Vec3 qdot_err;  // qdot - qdot_d
  Vec3 s;         // qdot_err + Lambda q_err
  Vec3 v;         // qdot_d - Lambda q_err
  Vec3 vdot;      // qddot_d - Lambda qdot_err
};

TrackingSignals tracking_signals(const State& x, const RefPoint& r,
                                 const Mat3& lambda);

// Feature map y(q, qdot) with fixed output dimension.
class FeatureMap {
 public:
  using Fn = std::function<Eigen::VectorXd(const State&)>;

  FeatureMap(std::size_t dim, Fn fn) : dim_(dim), fn_(std::move(fn)) {}

  // y = MLP(q, qdot).
  static FeatureMap network(const nn::Mlp& net);
  // y = 1 (p = 1).
  static FeatureMap constant_one();

  std::size_t dim() const { return dim_; }
  Eigen::VectorXd operator()(const State& x) const { return fn_(x); }

 private:
  std::size_t dim_;
  Fn fn_;
};

// Feature network with two hidden tanh layers; the last hidden layer is the
// feature vector.
nn::Mlp make_feature_network(const Key& key, std::size_t width = 32,
                             bool normalize_inputs = true);

// u = R(phi)^T (vdot + g - A y - K s). A is [3, p].
Vec3 adaptive_control(const State& x, const RefPoint& r,
                      const Eigen::MatrixXd& a, const Eigen::VectorXd& y,
                      const Gains& gains);
Vec3 adaptive_control(const State& x, const RefPoint& r,
                      const Eigen::MatrixXd& a, const FeatureMap& features,
                      const Gains& gains);

// Adot = Gamma s y^T.
Eigen::MatrixXd adaptation_law(const State& x, const RefPoint& r,
                               const Eigen::VectorXd& y, const Gains& gains);
Eigen::MatrixXd adaptation_law(const State& x, const RefPoint& r,
                               const FeatureMap& features, const Gains& gains);

struct PidGains {
  Mat3 kp = Mat3::Identity();
  Mat3 ki = Mat3::Zero();
  Mat3 kd = Mat3::Identity();
};

// K_P = K Lambda + Gamma, K_I = Gamma Lambda, K_D = K + Lambda.
PidGains pid_from_adaptive(const Gains& g);

// u = R(phi)^T (g + qddot_d - K_P q_err - K_I integral - K_D qdot_err).
Vec3 pid_control(const State& x, const RefPoint& r, const Vec3& integral,
                 const PidGains& gains);

// u = R(phi)^T (g - k_P q_err - k_D qdot_err); no feed-forward.
Vec3 pd_collect_control(const State& x, const RefPoint& r, double kp = 10.0,
                        double kd = 0.1);

// A controller with optional internal state z that evolves as
// zdot = state_rate(x, r, z) alongside the plant.
class Controller {
 public:
  virtual ~Controller() = default;
  virtual std::size_t state_size() const { return 0; }
  virtual Vec3 control(const State& x, const RefPoint& r,
                       std::span<const double> z) const = 0;
  virtual void state_rate(const State& x, const RefPoint& r,
                          std::span<const double> z,
                          std::span<double> zdot) const;
  // Both of the above; overridden where they share work.
  virtual Vec3 control_and_rate(const State& x, const RefPoint& r,
                                std::span<const double> z,
                                std::span<double> zdot) const {
    state_rate(x, r, z, zdot);
    return control(x, r, z);
  }
};

class PdCollectController final : public Controller {
 public:
  PdCollectController(double kp = 10.0, double kd = 0.1);
  Vec3 control(const State& x, const RefPoint& r,
               std::span<const double> z) const override;

 private:
  double kp_, kd_;
};

// Internal state: the integral of q_err.
class PidController final : public Controller {
 public:
  explicit PidController(PidGains gains) : gains_(gains) {}
  std::size_t state_size() const override { return 3; }
  Vec3 control(const State& x, const RefPoint& r,
               std::span<const double> z) const override;
  void state_rate(const State& x, const RefPoint& r, std::span<const double> z,
                  std::span<double> zdot) const override;

 private:
  PidGains gains_;
};

// Internal state: A, row-major [3, p].
class AdaptiveController final : public Controller {
 public:
  AdaptiveController(FeatureMap features, Gains gains)
      : features_(std::move(features)), gains_(gains) {}
  std::size_t state_size() const override { return 3 * features_.dim(); }
  Vec3 control(const State& x, const RefPoint& r,
               std::span<const double> z) const override;
  void state_rate(const State& x, const RefPoint& r, std::span<const double> z,
                  std::span<double> zdot) const override;
  Vec3 control_and_rate(const State& x, const RefPoint& r,
                        std::span<const double> z,
                        std::span<double> zdot) const override;

  const FeatureMap& features() const { return features_; }
  const Gains& gains() const { return gains_; }

 private:
  FeatureMap features_;
  Gains gains_;
};

}  // namespace coml::control
