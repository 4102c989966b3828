#pragma once

#include <Eigen/Core>
#include <array>
#include <cstddef>
#include <span>
#include <vector>

#include "coml/pfar.hpp"
#include "coml/random.hpp"

namespace coml::trajgen {

using pfar::Vec3;

inline constexpr std::size_t kWalkLength = 6;

// Per-coordinate bounds on the waypoint increments.
struct WalkBounds {
  double dx = 2.0;               // m
  double dy = 2.0;               // m
  double dphi = 0.5235987755982988;  // pi/6 rad
};

struct WaypointWalk {
  std::array<Vec3, kWalkLength> points;
};

// Uniform random walk starting at the origin.
WaypointWalk random_walk(const Key& key, const WalkBounds& bounds = {});

// Desired configuration and its first two time derivatives.
struct RefPoint {
  Vec3 q = Vec3::Zero();
  Vec3 qdot = Vec3::Zero();
  Vec3 qddot = Vec3::Zero();
};

// Per-coordinate polynomial spline with equal-duration segments. Each segment
// polynomial is stored in the normalized time s = (t - t_i) / h in [0, 1].
class ReferenceTrajectory {
 public:
  ReferenceTrajectory() = default;
  ReferenceTrajectory(double duration,
                      std::array<std::vector<Eigen::VectorXd>, 3> coeffs);

  double duration() const { return duration_; }
  std::size_t segments() const { return coeffs_[0].size(); }
  double segment_duration() const { return duration_ / segments(); }
  std::vector<double> knots() const;
  // Monomial coefficients (ascending powers of s) for one coordinate.
  const Eigen::VectorXd& coefficients(std::size_t segment,
                                      std::size_t coord) const {
    return coeffs_[coord][segment];
  }

  // m-th time derivative. Knots belong to the segment on their right, except
  // t = T which belongs to the last segment. Throws for t outside [0, T].
  Vec3 derivative(double t, int order) const;
  // Same, but evaluating the given segment's polynomial (for one-sided
  // limits at knots).
  Vec3 derivative_on(std::size_t segment, double t, int order) const;

  RefPoint evaluate(double t) const;
  Vec3 position(double t) const { return derivative(t, 0); }

 private:
  std::size_t segment_of(double t) const;

  double duration_ = 0.0;
  std::array<std::vector<Eigen::VectorXd>, 3> coeffs_;
};

struct SplineSpec {
  int degree_xy = 7;    // minimum snap
  int degree_phi = 5;   // minimum acceleration
};

// Diagnostics of the equality-constrained QP, per coordinate.
struct FitReport {
  std::array<double, 3> kkt_stationarity{};  // |Q c + A^T lambda|_inf
  std::array<double, 3> kkt_feasibility{};   // |A c - b|_inf
  std::array<double, 3> cost{};              // integral of squared derivative
};

// Minimum-snap (x, y) / minimum-acceleration (phi) spline through the
// waypoints over [0, duration] with equal segment durations and zero
// endpoint derivatives.
ReferenceTrajectory fit_spline(std::span<const Vec3> waypoints, double duration,
                               const SplineSpec& spec = {},
                               FitReport* report = nullptr);
inline ReferenceTrajectory fit_spline(const WaypointWalk& walk, double duration,
                                      const SplineSpec& spec = {},
                                      FitReport* report = nullptr) {
  return fit_spline(walk.points, duration, spec, report);
}

// The QP behind one coordinate, exposed for verification: minimize
// c^T Q c subject to A c = b (normalized time).
struct SplineQp {
  Eigen::MatrixXd cost;         // Q
  Eigen::MatrixXd constraints;  // A
  Eigen::VectorXd rhs;          // b
  int degree = 0;
  int minimized_order = 0;
};

// Continuity of derivatives 1..minimized_order at interior knots and zero
// derivatives 1..endpoint_order at both ends.
SplineQp build_spline_qp(std::span<const double> waypoints, int degree,
                         int minimized_order, int endpoint_order);

// Integral over [0, T] of the squared `order`-th derivative of one coordinate.
double derivative_cost(const ReferenceTrajectory& ref, std::size_t coord,
                       int order);

}  // namespace coml::trajgen
