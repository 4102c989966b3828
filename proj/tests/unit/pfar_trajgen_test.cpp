#include <gtest/gtest.h>

#include <Eigen/LU>
#include <cmath>
#include <numbers>

#include "coml/errors.hpp"
#include "coml/pfar.hpp"
#include "coml/random.hpp"
#include "coml/trajgen.hpp"

namespace coml {
namespace {

using pfar::Mat3;
using pfar::State;
using pfar::Vec3;
using pfar::WindField;

State make_state(Vec3 q, Vec3 qdot) {
  State s;
  s.q = q;
  s.qdot = qdot;
  return s;
}

TEST(Rotation, ZeroIsIdentity) { EXPECT_EQ(pfar::rotation(0.0), Mat3::Identity()); }

TEST(Rotation, QuarterTurn) {
  Mat3 expected;
  expected << 0, -1, 0, 1, 0, 0, 0, 0, 1;
  EXPECT_LT((pfar::rotation(std::numbers::pi / 2) - expected).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(Rotation, Orthogonal) {
  Stream rng(Key::from_seed(1));
  for (int i = 0; i < 100; ++i) {
    const Mat3 r = pfar::rotation(rng.uniform(-10.0, 10.0));
    EXPECT_LT((r.transpose() * r - Mat3::Identity()).cwiseAbs().maxCoeff(), 1e-14);
  }
}

TEST(Drag, StillAirAtRest) {
  EXPECT_EQ(pfar::drag_force(State{}, {0.0, 0.1, 1.0}), Vec3::Zero());
}

TEST(Drag, ForwardMotion) {
  const pfar::Drag d = pfar::drag(make_state(Vec3::Zero(), Vec3(1, 0, 0)), {0.0, 0.1, 1.0});
  EXPECT_DOUBLE_EQ(d.v1, 1.0);
  EXPECT_DOUBLE_EQ(d.v2, 0.0);
  EXPECT_LT((d.force - Vec3(-0.1, 0, 0)).norm(), 1e-15);
}

TEST(Drag, WindPushesDownwind) {
  const pfar::Drag d = pfar::drag(State{}, {2.0, 0.1, 1.0});
  EXPECT_DOUBLE_EQ(d.v1, -2.0);
  EXPECT_LT((d.force - Vec3(0.4, 0, 0)).norm(), 1e-15);
}

TEST(Drag, DependsOnlyOnRelativeVelocity) {
  Stream rng(Key::from_seed(2));
  for (int i = 0; i < 100; ++i) {
    const Vec3 q(rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(-1, 1));
    const Vec3 qd(rng.uniform(-3, 3), rng.uniform(-3, 3), rng.uniform(-1, 1));
    const double w = rng.uniform(0, 8), c = rng.uniform(-3, 3);
    const Vec3 f0 = pfar::drag_force(make_state(q, qd), {w, 0.1, 1.0});
    const Vec3 f1 = pfar::drag_force(make_state(q, qd + Vec3(c, 0, 0)), {w + c, 0.1, 1.0});
    EXPECT_LT((f0 - f1).norm(), 1e-12);
    EXPECT_EQ(f0[2], 0.0);
  }
}

TEST(Dynamics, Hover) {
  const pfar::Vec6 d = pfar::true_dynamics(State{}, Vec3(0, 9.81, 0), {});
  EXPECT_EQ(d, pfar::Vec6::Zero());
}

TEST(Dynamics, FreeFall) {
  const pfar::Vec6 d = pfar::true_dynamics(State{}, Vec3::Zero(), {});
  EXPECT_EQ(d.tail<3>(), Vec3(0, -9.81, 0));
}

TEST(Dynamics, HoverWithDrag) {
  const pfar::Vec6 d =
      pfar::true_dynamics(make_state(Vec3::Zero(), Vec3(1, 0, 0)), Vec3(0, 9.81, 0), {0.0, 0.1, 1.0});
  EXPECT_EQ(d.head<3>(), Vec3(1, 0, 0));
  EXPECT_LT((d.tail<3>() - Vec3(-0.1, 0, 0)).norm(), 1e-15);
}

TEST(Dynamics, UnitInertiaForm) {
  // qddot = -g + R u + f: doubling u - R^T g doubles the net acceleration.
  const State s = make_state(Vec3(0, 0, 0.4), Vec3::Zero());
  const Vec3 u(0.3, -0.2, 0.5);
  const Vec3 hover = pfar::rotation(0.4).transpose() * pfar::gravity();
  const Vec3 a1 = pfar::true_dynamics(s, hover + u, {}).tail<3>();
  const Vec3 a2 = pfar::true_dynamics(s, hover + 2.0 * u, {}).tail<3>();
  EXPECT_LT((a2 - 2.0 * a1).norm(), 1e-13);
  EXPECT_LT((a1 - pfar::rotation(0.4) * u).norm(), 1e-13);
}

TEST(Walk, ZeroBoundsStayAtOrigin) {
  const trajgen::WaypointWalk w = trajgen::random_walk(Key::from_seed(3), {0.0, 0.0, 0.0});
  for (const Vec3& p : w.points) EXPECT_EQ(p, Vec3::Zero());
}

TEST(Walk, IncrementsWithinBounds) {
  const trajgen::WalkBounds b;
  for (std::uint64_t s = 0; s < 1000; ++s) {
    const trajgen::WaypointWalk w = trajgen::random_walk(Key::from_seed(s), b);
    ASSERT_EQ(w.points[0], Vec3::Zero());
    for (std::size_t i = 1; i < w.points.size(); ++i) {
      const Vec3 d = w.points[i] - w.points[i - 1];
      ASSERT_LE(std::abs(d[0]), b.dx);
      ASSERT_LE(std::abs(d[1]), b.dy);
      ASSERT_LE(std::abs(d[2]), b.dphi);
    }
  }
}

TEST(Walk, Deterministic) {
  const auto a = trajgen::random_walk(Key::from_seed(5).split("w"));
  const auto b = trajgen::random_walk(Key::from_seed(5).split("w"));
  for (std::size_t i = 0; i < a.points.size(); ++i) EXPECT_EQ(a.points[i], b.points[i]);
}

TEST(Spline, StationaryWalk) {
  trajgen::WaypointWalk w;
  for (Vec3& p : w.points) p = Vec3(1.0, -2.0, 0.3);
  trajgen::FitReport rep;
  const trajgen::ReferenceTrajectory r = trajgen::fit_spline(w, 5.0, {}, &rep);
  for (double t = 0.0; t <= 5.0; t += 0.37) {
    const trajgen::RefPoint p = r.evaluate(t);
    EXPECT_LT((p.q - Vec3(1.0, -2.0, 0.3)).norm(), 1e-10);
    EXPECT_LT(p.qdot.norm(), 1e-9);
    EXPECT_LT(p.qddot.norm(), 1e-8);
  }
  for (double c : rep.cost) EXPECT_LT(c, 1e-12);
}

class SplineProperties : public ::testing::TestWithParam<std::uint64_t> {};

TEST_P(SplineProperties, InterpolatesAndIsSmooth) {
  const trajgen::WaypointWalk w = trajgen::random_walk(Key::from_seed(GetParam()));
  const double duration = 10.0;
  trajgen::FitReport rep;
  const trajgen::ReferenceTrajectory r = trajgen::fit_spline(w, duration, {}, &rep);
  const std::vector<double> knots = r.knots();
  ASSERT_EQ(knots.size(), w.points.size());
  for (std::size_t i = 0; i < knots.size(); ++i)
    EXPECT_LT((r.position(knots[i]) - w.points[i]).cwiseAbs().maxCoeff(), 1e-8);

  const trajgen::RefPoint start = r.evaluate(0.0), end = r.evaluate(duration);
  EXPECT_LT(start.qdot.cwiseAbs().maxCoeff(), 1e-8);
  EXPECT_LT(start.qddot.cwiseAbs().maxCoeff(), 1e-8);
  EXPECT_LT(end.qdot.cwiseAbs().maxCoeff(), 1e-8);
  EXPECT_LT(end.qddot.cwiseAbs().maxCoeff(), 1e-8);

  for (std::size_t i = 1; i + 1 < knots.size(); ++i)
    for (int m = 1; m <= 2; ++m) {
      const Vec3 left = r.derivative_on(i - 1, knots[i], m);
      const Vec3 right = r.derivative_on(i, knots[i], m);
      EXPECT_LT((left - right).cwiseAbs().maxCoeff(), 1e-8) << "knot " << i << " order " << m;
    }
  for (int c = 0; c < 3; ++c) {
    EXPECT_LT(rep.kkt_stationarity[c], 1e-8);
    EXPECT_LT(rep.kkt_feasibility[c], 1e-8);
  }
}

TEST_P(SplineProperties, NoFeasiblePerturbationLowersCost) {
  const trajgen::WaypointWalk w = trajgen::random_walk(Key::from_seed(100 + GetParam()));
  const trajgen::ReferenceTrajectory r = trajgen::fit_spline(w, 5.0);
  Stream rng(Key::from_seed(GetParam()).split("perturb"));
  for (int c = 0; c < 3; ++c) {
    std::vector<double> pts;
    for (const Vec3& p : w.points) pts.push_back(p[c]);
    const bool angle = c == 2;
    const trajgen::SplineQp qp =
        trajgen::build_spline_qp(pts, angle ? 5 : 7, angle ? 2 : 4, angle ? 2 : 3);
    const int n = qp.degree + 1;
    Eigen::VectorXd opt(n * static_cast<int>(r.segments()));
    for (std::size_t i = 0; i < r.segments(); ++i)
      opt.segment(static_cast<int>(i) * n, n) = r.coefficients(i, c);
    const double best = opt.dot(qp.cost * opt);
    const Eigen::MatrixXd null = Eigen::FullPivLU<Eigen::MatrixXd>(qp.constraints).kernel();
    ASSERT_GT(null.cols(), 0);
    for (int k = 0; k < 100; ++k) {
      Eigen::VectorXd z(null.cols());
      for (Eigen::Index j = 0; j < z.size(); ++j) z[j] = rng.uniform(-1.0, 1.0);
      const Eigen::VectorXd d = null * z * (k < 50 ? 1e-3 : 1.0);
      const Eigen::VectorXd x = opt + d;
      EXPECT_LT((qp.constraints * x - qp.rhs).cwiseAbs().maxCoeff(), 1e-8);
      EXPECT_GE(x.dot(qp.cost * x), best * (1.0 - 1e-12) - 1e-12);
    }
  }
}

INSTANTIATE_TEST_SUITE_P(Seeds, SplineProperties, ::testing::Range<std::uint64_t>(0, 20));

TEST(Spline, OutsideDurationThrows) {
  const trajgen::ReferenceTrajectory r =
      trajgen::fit_spline(trajgen::random_walk(Key::from_seed(1)), 5.0);
  EXPECT_THROW(r.evaluate(-0.1), Error);
  EXPECT_THROW(r.evaluate(5.1), Error);
  EXPECT_NO_THROW(r.evaluate(5.0));
}

}  // namespace
}  // namespace coml
