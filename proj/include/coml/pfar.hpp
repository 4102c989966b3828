#pragma once

#include <Eigen/Core>

// Planar fully-actuated rotorcraft: q = (x, y, phi), mass-normalized thrusts
// along the body axes plus torque, subject to quadratic drag from a constant
// wind along the inertial x-axis.
namespace coml::pfar {

using Vec3 = Eigen::Vector3d;
using Vec6 = Eigen::Matrix<double, 6, 1>;
using Mat3 = Eigen::Matrix3d;

inline constexpr double kGravity = 9.81;  // m/s^2

inline Vec3 gravity() { return Vec3(0.0, kGravity, 0.0); }

struct State {
  Vec3 q = Vec3::Zero();     // (x [m], y [m], phi [rad]); phi is never wrapped
  Vec3 qdot = Vec3::Zero();

  Vec6 stacked() const;
  static State from_stacked(const Eigen::Ref<const Vec6>& x);
};

struct WindField {
  double speed = 0.0;  // w [m/s]
  double beta1 = 0.1;
  double beta2 = 1.0;

  void validate() const;
};

Mat3 rotation(double phi);

struct Drag {
  double v1 = 0.0;  // body-frame velocity relative to the air
  double v2 = 0.0;
  Vec3 force = Vec3::Zero();
};

Drag drag(const State& s, const WindField& wind);
inline Vec3 drag_force(const State& s, const WindField& wind) {
  return drag(s, wind).force;
}

// (qdot, -g + R(phi) u + f_ext) for an arbitrary external force.
Vec6 dynamics_with_force(const State& s, const Vec3& u, const Vec3& f_ext);

Vec6 true_dynamics(const State& s, const Vec3& u, const WindField& wind);

}  // namespace coml::pfar
