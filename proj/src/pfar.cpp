#include "coml/pfar.hpp"

#include <cmath>

#include "coml/errors.hpp"

namespace coml::pfar {

Vec6 State::stacked() const {
  Vec6 x;
  x << q, qdot;
  return x;
}

State State::from_stacked(const Eigen::Ref<const Vec6>& x) {
  State s;
  s.q = x.head<3>();
  s.qdot = x.tail<3>();
  return s;
}

void WindField::validate() const {
  if (!(beta1 > 0.0) || !(beta2 > 0.0)) {
    throw ConfigError("drag coefficients must be positive");
  }
  if (!std::isfinite(speed)) throw ConfigError("wind speed must be finite");
}

Mat3 rotation(double phi) {
  const double c = std::cos(phi), s = std::sin(phi);
  Mat3 r;
  r << c, -s, 0.0,
       s, c, 0.0,
       0.0, 0.0, 1.0;
  return r;
}

Drag drag(const State& s, const WindField& wind) {
  const double phi = s.q.z();
  const double c = std::cos(phi), sn = std::sin(phi);
  const double rel_x = s.qdot.x() - wind.speed;
  const double rel_y = s.qdot.y();
  Drag d;
  d.v1 = rel_x * c + rel_y * sn;
  d.v2 = -rel_x * sn + rel_y * c;
  const double b1 = wind.beta1 * d.v1 * std::abs(d.v1);
  const double b2 = wind.beta2 * d.v2 * std::abs(d.v2);
  d.force = Vec3(-(c * b1 - sn * b2), -(sn * b1 + c * b2), 0.0);
  return d;
}

Vec6 dynamics_with_force(const State& s, const Vec3& u, const Vec3& f_ext) {
  Vec6 dx;
  dx.head<3>() = s.qdot;
  dx.tail<3>() = -gravity() + rotation(s.q.z()) * u + f_ext;
  return dx;
}

Vec6 true_dynamics(const State& s, const Vec3& u, const WindField& wind) {
  return dynamics_with_force(s, u, drag_force(s, wind));
}

}  // namespace coml::pfar
