#include "coml/controllers.hpp"

#include <cmath>

#include "coml/errors.hpp"

namespace coml::control {

Mat3 spd_from_log_cholesky(const CholeskyParams& p) {
  Mat3 l = Mat3::Zero();
  l(0, 0) = std::exp(p[0]);
  l(1, 0) = p[1];
  l(1, 1) = std::exp(p[2]);
  l(2, 0) = p[3];
  l(2, 1) = p[4];
  l(2, 2) = std::exp(p[5]);
  return l * l.transpose();
}

ad::Var spd_from_log_cholesky(ad::Var p) {
  if (p.shape().numel() != kCholeskyParams) {
    throw ShapeError("log-Cholesky parameters must have 6 entries");
  }
  ad::Var flat = ad::reshape(p, ad::Shape{kCholeskyParams});
  // Exponentiate the diagonal slots, keep the rest.
  ad::Var e = ad::exp(flat);
  ad::Var mixed = ad::concat({ad::slice(e, 0, 1), ad::slice(flat, 1, 2),
                              ad::slice(e, 2, 3), ad::slice(flat, 3, 5),
                              ad::slice(e, 5, 6)});
  // Scatter into a row-major lower-triangular 3x3.
  ad::Var l = ad::gather(mixed, {0, -1, -1, 1, 2, -1, 3, 4, 5}, ad::Shape{3, 3});
  return ad::matmul(l, ad::transpose(l));
}

Gains gains_from_log_cholesky(const GainParams& p) {
  return {spd_from_log_cholesky(p.lambda), spd_from_log_cholesky(p.k),
          spd_from_log_cholesky(p.gamma)};
}

TrackingSignals tracking_signals(const State& x, const RefPoint& r,
                                 const Mat3& lambda) {
  TrackingSignals t;
  t.q_err = x.q - r.q;
  t.qdot_err = x.qdot - r.qdot;
  t.s = t.qdot_err + lambda * t.q_err;
  t.v = r.qdot - lambda * t.q_err;
  t.vdot = r.qddot - lambda * t.qdot_err;
  return t;
}

FeatureMap FeatureMap::network(const nn::Mlp& net) {
  return FeatureMap(net.output_size(), [net](const State& x) {
    const pfar::Vec6 in = x.stacked();
    return net.eval(std::span<const double>(in.data(), 6));
  });
}

FeatureMap FeatureMap::constant_one() {
  return FeatureMap(1, [](const State&) { return Eigen::VectorXd::Ones(1); });
}

nn::Mlp make_feature_network(const Key& key, std::size_t width,
                             bool normalize_inputs) {
  return nn::glorot_mlp(key, {6, width, width}, false,
                        nn::state_input_scale(normalize_inputs));
}

Vec3 adaptive_control(const State& x, const RefPoint& r,
                      const Eigen::MatrixXd& a, const Eigen::VectorXd& y,
                      const Gains& gains) {
  const TrackingSignals t = tracking_signals(x, r, gains.lambda);
  const Vec3 f = t.vdot + pfar::gravity() - a * y - gains.k * t.s;
  return pfar::rotation(x.q.z()).transpose() * f;
}

Vec3 adaptive_control(const State& x, const RefPoint& r,
                      const Eigen::MatrixXd& a, const FeatureMap& features,
                      const Gains& gains) {
  return adaptive_control(x, r, a, features(x), gains);
}

Eigen::MatrixXd adaptation_law(const State& x, const RefPoint& r,
                               const Eigen::VectorXd& y, const Gains& gains) {
  const TrackingSignals t = tracking_signals(x, r, gains.lambda);
  return (gains.gamma * t.s) * y.transpose();
}

Eigen::MatrixXd adaptation_law(const State& x, const RefPoint& r,
                               const FeatureMap& features, const Gains& gains) {
  return adaptation_law(x, r, features(x), gains);
}

PidGains pid_from_adaptive(const Gains& g) {
  return {g.k * g.lambda + g.gamma, g.gamma * g.lambda, g.k + g.lambda};
}

Vec3 pid_control(const State& x, const RefPoint& r, const Vec3& integral,
                 const PidGains& gains) {
  const Vec3 e = x.q - r.q;
  const Vec3 edot = x.qdot - r.qdot;
  const Vec3 f = pfar::gravity() + r.qddot - gains.kp * e - gains.ki * integral -
                 gains.kd * edot;
  return pfar::rotation(x.q.z()).transpose() * f;
}

Vec3 pd_collect_control(const State& x, const RefPoint& r, double kp,
                        double kd) {
  const Vec3 f =
      pfar::gravity() - kp * (x.q - r.q) - kd * (x.qdot - r.qdot);
  return pfar::rotation(x.q.z()).transpose() * f;
}

void Controller::state_rate(const State&, const RefPoint&,
                            std::span<const double>, std::span<double>) const {}

PdCollectController::PdCollectController(double kp, double kd)
    : kp_(kp), kd_(kd) {
  if (!(kp > 0.0) || !(kd > 0.0)) throw ConfigError("PD gains must be > 0");
}

Vec3 PdCollectController::control(const State& x, const RefPoint& r,
                                  std::span<const double>) const {
  return pd_collect_control(x, r, kp_, kd_);
}

Vec3 PidController::control(const State& x, const RefPoint& r,
                            std::span<const double> z) const {
  return pid_control(x, r, Vec3(z[0], z[1], z[2]), gains_);
}

void PidController::state_rate(const State& x, const RefPoint& r,
                               std::span<const double>,
                               std::span<double> zdot) const {
  const Vec3 e = x.q - r.q;
  for (int i = 0; i < 3; ++i) zdot[i] = e[i];
}

Vec3 AdaptiveController::control(const State& x, const RefPoint& r,
                                 std::span<const double> z) const {
  const auto p = static_cast<Eigen::Index>(features_.dim());
  Eigen::Map<const Eigen::Matrix<double, 3, Eigen::Dynamic, Eigen::RowMajor>> a(
      z.data(), 3, p);
  return adaptive_control(x, r, Eigen::MatrixXd(a), features_(x), gains_);
}

void AdaptiveController::state_rate(const State& x, const RefPoint& r,
                                    std::span<const double>,
                                    std::span<double> zdot) const {
  const Eigen::MatrixXd ad = adaptation_law(x, r, features_, gains_);
  for (Eigen::Index i = 0; i < 3; ++i)
    for (Eigen::Index j = 0; j < ad.cols(); ++j)
      zdot[static_cast<std::size_t>(i * ad.cols() + j)] = ad(i, j);
}

Vec3 AdaptiveController::control_and_rate(const State& x, const RefPoint& r,
                                          std::span<const double> z,
                                          std::span<double> zdot) const {
  const auto p = static_cast<Eigen::Index>(features_.dim());
  const Eigen::VectorXd y = features_(x);
  Eigen::Map<const Eigen::Matrix<double, 3, Eigen::Dynamic, Eigen::RowMajor>> a(
      z.data(), 3, p);
  const TrackingSignals t = tracking_signals(x, r, gains_.lambda);
  const Vec3 gs = gains_.gamma * t.s;
  for (Eigen::Index i = 0; i < 3; ++i)
    for (Eigen::Index j = 0; j < p; ++j)
      zdot[static_cast<std::size_t>(i * p + j)] = gs[i] * y[j];
  const Vec3 f = t.vdot + pfar::gravity() - a * y - gains_.k * t.s;
  return pfar::rotation(x.q.z()).transpose() * f;
}

}  // namespace coml::control
