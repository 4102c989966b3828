#include "coml/trajgen.hpp"

#include <Eigen/LU>
#include <cmath>
#include <string>

#include "coml/errors.hpp"

namespace coml::trajgen {

namespace {

// k! / (k - m)!, zero for k < m.
double falling(int k, int m) {
  if (k < m) return 0.0;
  double r = 1.0;
  for (int i = 0; i < m; ++i) r *= static_cast<double>(k - i);
  return r;
}

// m-th derivative (with respect to s) of a monomial-coefficient polynomial.
double poly_derivative(const Eigen::VectorXd& c, double s, int m) {
  double acc = 0.0;
  for (int k = static_cast<int>(c.size()) - 1; k >= m; --k)
    acc = acc * s + c[k] * falling(k, m);
  return acc;
}

// Q_kl = integral_0^1 D^r s^k D^r s^l ds
Eigen::MatrixXd segment_cost(int degree, int r) {
  const int n = degree + 1;
  Eigen::MatrixXd q = Eigen::MatrixXd::Zero(n, n);
  for (int k = r; k < n; ++k)
    for (int l = r; l < n; ++l)
      q(k, l) = falling(k, r) * falling(l, r) / static_cast<double>(k + l - 2 * r + 1);
  return q;
}

}  // namespace

WaypointWalk random_walk(const Key& key, const WalkBounds& bounds) {
  if (bounds.dx < 0.0 || bounds.dy < 0.0 || bounds.dphi < 0.0) {
    throw ConfigError("walk bounds must be non-negative");
  }
  Stream rng(key);
  WaypointWalk walk;
  walk.points[0] = Vec3::Zero();
  for (std::size_t i = 1; i < kWalkLength; ++i) {
    const double dx = rng.uniform(-bounds.dx, bounds.dx);
    const double dy = rng.uniform(-bounds.dy, bounds.dy);
    const double dphi = rng.uniform(-bounds.dphi, bounds.dphi);
    walk.points[i] = walk.points[i - 1] + Vec3(dx, dy, dphi);
  }
  return walk;
}

ReferenceTrajectory::ReferenceTrajectory(
    double duration, std::array<std::vector<Eigen::VectorXd>, 3> coeffs)
    : duration_(duration), coeffs_(std::move(coeffs)) {
  if (!(duration_ > 0.0)) throw ConfigError("trajectory duration must be > 0");
  if (coeffs_[0].empty() || coeffs_[1].size() != coeffs_[0].size() ||
      coeffs_[2].size() != coeffs_[0].size()) {
    throw ShapeError("trajectory coordinates need the same segment count");
  }
}

std::vector<double> ReferenceTrajectory::knots() const {
  std::vector<double> k(segments() + 1);
  const double h = segment_duration();
  for (std::size_t i = 0; i < k.size(); ++i) k[i] = h * static_cast<double>(i);
  k.back() = duration_;
  return k;
}

std::size_t ReferenceTrajectory::segment_of(double t) const {
  const double slack = 1e-9 * std::max(1.0, duration_);
  if (!(t >= -slack && t <= duration_ + slack)) {
    throw Error("reference evaluated at t = " + std::to_string(t) +
                " outside [0, " + std::to_string(duration_) + "]");
  }
  const double h = segment_duration();
  const double f = std::floor(std::max(t, 0.0) / h);
  const std::size_t i = static_cast<std::size_t>(std::max(f, 0.0));
  return std::min(i, segments() - 1);
}

Vec3 ReferenceTrajectory::derivative_on(std::size_t segment, double t,
                                        int order) const {
  const double h = segment_duration();
  const double s = (t - h * static_cast<double>(segment)) / h;
  const double scale = std::pow(h, -order);
  Vec3 out;
  for (int c = 0; c < 3; ++c)
    out[c] = scale * poly_derivative(coeffs_[c][segment], s, order);
  return out;
}

Vec3 ReferenceTrajectory::derivative(double t, int order) const {
  const std::size_t seg = segment_of(t);
  return derivative_on(seg, std::clamp(t, 0.0, duration_), order);
}

RefPoint ReferenceTrajectory::evaluate(double t) const {
  const std::size_t seg = segment_of(t);
  const double tc = std::clamp(t, 0.0, duration_);
  return {derivative_on(seg, tc, 0), derivative_on(seg, tc, 1),
          derivative_on(seg, tc, 2)};
}

SplineQp build_spline_qp(std::span<const double> waypoints, int degree,
                         int minimized_order, int endpoint_order) {
  const int segs = static_cast<int>(waypoints.size()) - 1;
  if (segs < 1) throw Error("spline needs at least two waypoints");
  const int n = degree + 1;
  const int nv = segs * n;
  const int r = minimized_order;

  SplineQp qp;
  qp.degree = degree;
  qp.minimized_order = r;
  qp.cost = Eigen::MatrixXd::Zero(nv, nv);
  const Eigen::MatrixXd q = segment_cost(degree, r);
  for (int i = 0; i < segs; ++i) qp.cost.block(i * n, i * n, n, n) = q;

  const int rows = 2 * segs + r * (segs - 1) + 2 * endpoint_order;
  qp.constraints = Eigen::MatrixXd::Zero(rows, nv);
  qp.rhs = Eigen::VectorXd::Zero(rows);
  int row = 0;
  // D^m p_i at s = 0 and s = 1.
  auto at0 = [&](int seg, int m, double sign) {
    qp.constraints(row, seg * n + m) += sign * falling(m, m);
  };
  auto at1 = [&](int seg, int m, double sign) {
    for (int k = m; k < n; ++k)
      qp.constraints(row, seg * n + k) += sign * falling(k, m);
  };
  for (int i = 0; i < segs; ++i) {
    at0(i, 0, 1.0);
    qp.rhs[row++] = waypoints[i];
    at1(i, 0, 1.0);
    qp.rhs[row++] = waypoints[i + 1];
  }
  for (int i = 0; i + 1 < segs; ++i) {
    for (int m = 1; m <= r; ++m) {
      at1(i, m, 1.0);
      at0(i + 1, m, -1.0);
      ++row;
    }
  }
  for (int m = 1; m <= endpoint_order; ++m) {
    at0(0, m, 1.0);
    ++row;
    at1(segs - 1, m, 1.0);
    ++row;
  }
  return qp;
}

ReferenceTrajectory fit_spline(std::span<const Vec3> waypoints, double duration,
                               const SplineSpec& spec, FitReport* report) {
  if (!(duration > 0.0)) throw ConfigError("spline duration must be > 0");
  const std::size_t segs = waypoints.size() - 1;
  std::array<std::vector<Eigen::VectorXd>, 3> coeffs;
  FitReport rep;
  for (int c = 0; c < 3; ++c) {
    std::vector<double> w(waypoints.size());
    for (std::size_t i = 0; i < w.size(); ++i) w[i] = waypoints[i][c];
    const bool angle = c == 2;
    const int degree = angle ? spec.degree_phi : spec.degree_xy;
    const int order = angle ? 2 : 4;
    const int endpoint = angle ? 2 : 3;
    const SplineQp qp = build_spline_qp(w, degree, order, endpoint);

    // The cost scale does not change the minimizer; normalize it so the
    // KKT blocks have comparable magnitude.
    const double qscale = qp.cost.cwiseAbs().maxCoeff();
    const Eigen::MatrixXd qn = qp.cost / qscale;
    const int nv = static_cast<int>(qn.rows());
    const int nc = static_cast<int>(qp.constraints.rows());
    Eigen::MatrixXd kkt = Eigen::MatrixXd::Zero(nv + nc, nv + nc);
    kkt.topLeftCorner(nv, nv) = qn;
    kkt.topRightCorner(nv, nc) = qp.constraints.transpose();
    kkt.bottomLeftCorner(nc, nv) = qp.constraints;
    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(nv + nc);
    rhs.tail(nc) = qp.rhs;

    Eigen::FullPivLU<Eigen::MatrixXd> lu(kkt);
    if (!lu.isInvertible()) {
      throw Error("spline KKT system is singular");
    }
    Eigen::VectorXd sol = lu.solve(rhs);
    // One step of iterative refinement.
    sol += lu.solve(rhs - kkt * sol);

    const Eigen::VectorXd cvec = sol.head(nv);
    const Eigen::VectorXd lambda = sol.tail(nc);
    rep.kkt_stationarity[c] = (qn * cvec + qp.constraints.transpose() * lambda)
                                  .cwiseAbs()
                                  .maxCoeff();
    rep.kkt_feasibility[c] =
        (qp.constraints * cvec - qp.rhs).cwiseAbs().maxCoeff();

    const int n = degree + 1;
    for (std::size_t i = 0; i < segs; ++i)
      coeffs[c].push_back(cvec.segment(static_cast<int>(i) * n, n));
  }
  ReferenceTrajectory ref(duration, std::move(coeffs));
  for (int c = 0; c < 3; ++c) rep.cost[c] = derivative_cost(ref, c, c == 2 ? 2 : 4);
  if (report) *report = rep;
  return ref;
}

double derivative_cost(const ReferenceTrajectory& ref, std::size_t coord,
                       int order) {
  const double h = ref.segment_duration();
  double total = 0.0;
  for (std::size_t i = 0; i < ref.segments(); ++i) {
    const Eigen::VectorXd& c = ref.coefficients(i, coord);
    const Eigen::MatrixXd q = segment_cost(static_cast<int>(c.size()) - 1, order);
    total += c.dot(q * c) * std::pow(h, 1 - 2 * order);
  }
  return total;
}

}  // namespace coml::trajgen
