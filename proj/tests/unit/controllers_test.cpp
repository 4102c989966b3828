#include <gtest/gtest.h>

#include <Eigen/Eigenvalues>
#include <cmath>

#include "coml/controllers.hpp"
#include "coml/errors.hpp"
#include "coml/random.hpp"
#include "coml/rollout.hpp"
#include "scenarios.hpp"

namespace coml::control {
namespace {

State make_state(Vec3 q, Vec3 qdot) {
  State s;
  s.q = q;
  s.qdot = qdot;
  return s;
}

RefPoint make_ref(Vec3 q, Vec3 qdot, Vec3 qddot) {
  RefPoint r;
  r.q = q;
  r.qdot = qdot;
  r.qddot = qddot;
  return r;
}

Vec3 random_vec(Stream& rng, double s = 1.0) {
  return Vec3(rng.uniform(-s, s), rng.uniform(-s, s), rng.uniform(-s, s));
}

TEST(LogCholesky, ZeroIsIdentity) {
  EXPECT_EQ(spd_from_log_cholesky(CholeskyParams{}), Mat3::Identity());
}

TEST(LogCholesky, DiagonalExample) {
  const CholeskyParams p{std::log(2.0), 0.0, 0.0, 0.0, 0.0, std::log(3.0)};
  const Mat3 q = spd_from_log_cholesky(p);
  EXPECT_LT((q - Eigen::Vector3d(4.0, 1.0, 9.0).asDiagonal().toDenseMatrix()).cwiseAbs().maxCoeff(),
            1e-14);
}

TEST(LogCholesky, HandComputedOffDiagonal) {
  const CholeskyParams p{0.0, 2.0, 0.0, -1.0, 0.5, 0.0};
  Mat3 l;
  l << 1, 0, 0, 2, 1, 0, -1, 0.5, 1;
  EXPECT_LT((spd_from_log_cholesky(p) - l * l.transpose()).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(LogCholesky, AlwaysPositiveDefinite) {
  Stream rng(Key::from_seed(1));
  for (int i = 0; i < 500; ++i) {
    CholeskyParams p;
    for (double& v : p) v = rng.uniform(-4.0, 4.0);
    const Mat3 q = spd_from_log_cholesky(p);
    EXPECT_GT(Eigen::SelfAdjointEigenSolver<Mat3>(q).eigenvalues().minCoeff(), 0.0);
  }
}

TEST(LogCholesky, TapedMatchesPlain) {
  Stream rng(Key::from_seed(2));
  CholeskyParams p;
  for (double& v : p) v = rng.uniform(-1.0, 1.0);
  ad::Tape t;
  const ad::Var q = spd_from_log_cholesky(t.input(ad::Tensor::vector({p.begin(), p.end()})));
  const Mat3 ref = spd_from_log_cholesky(p);
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) EXPECT_DOUBLE_EQ(q.value().at(r, c), ref(r, c));
}

TEST(Tracking, OnReference) {
  const RefPoint r = make_ref(Vec3(1, 2, 0.1), Vec3(0.5, -0.3, 0.2), Vec3(0.1, 0.2, -0.4));
  const TrackingSignals s = tracking_signals(make_state(r.q, r.qdot), r, 2.0 * Mat3::Identity());
  EXPECT_EQ(s.q_err, Vec3::Zero());
  EXPECT_EQ(s.s, Vec3::Zero());
  EXPECT_EQ(s.v, r.qdot);
  EXPECT_EQ(s.vdot, r.qddot);
}

TEST(Tracking, UnitPositionError) {
  const RefPoint r = make_ref(Vec3::Zero(), Vec3(0.5, 0, 0), Vec3::Zero());
  const TrackingSignals s =
      tracking_signals(make_state(Vec3(1, 0, 0), r.qdot), r, Mat3::Identity());
  EXPECT_EQ(s.s, Vec3(1, 0, 0));
  EXPECT_EQ(s.v, r.qdot - Vec3(1, 0, 0));
}

TEST(Tracking, SlidingVariableIsLinear) {
  Stream rng(Key::from_seed(3));
  const RefPoint r = make_ref(random_vec(rng), random_vec(rng), random_vec(rng));
  const Mat3 lambda = spd_from_log_cholesky({0.1, 0.2, -0.3, 0.4, 0.1, 0.2});
  const Vec3 e1 = random_vec(rng), e2 = random_vec(rng), d1 = random_vec(rng), d2 = random_vec(rng);
  auto s_of = [&](Vec3 e, Vec3 d) {
    return tracking_signals(make_state(r.q + e, r.qdot + d), r, lambda).s;
  };
  const Vec3 lhs = s_of(e1 + 2.0 * e2, d1 + 2.0 * d2);
  EXPECT_LT((lhs - (s_of(e1, d1) + 2.0 * s_of(e2, d2))).norm(), 1e-12);
}

TEST(Adaptive, HoverOnReference) {
  const RefPoint r;
  const Eigen::MatrixXd a = Eigen::MatrixXd::Zero(3, 4);
  const Eigen::VectorXd y = Eigen::VectorXd::Ones(4);
  const Vec3 u = adaptive_control(State{}, r, a, y, Gains{});
  EXPECT_EQ(u, Vec3(0, 9.81, 0));
}

TEST(Adaptive, ConstantFeatureMatchesPidWithoutIntegral) {
  Stream rng(Key::from_seed(4));
  const RefPoint r = make_ref(random_vec(rng), random_vec(rng), random_vec(rng));
  const State x = make_state(r.q, r.qdot);
  Gains g;
  g.lambda = 1.0 * Mat3::Identity();
  g.k = 10.0 * Mat3::Identity();
  g.gamma = 10.0 * Mat3::Identity();
  const Vec3 ua = adaptive_control(x, r, Eigen::MatrixXd::Zero(3, 1), FeatureMap::constant_one(), g);
  const Vec3 up = pid_control(x, r, Vec3::Zero(), pid_from_adaptive(g));
  EXPECT_LT((ua - up).norm(), 1e-14);
}

TEST(Adaptive, LinearInA) {
  Stream rng(Key::from_seed(5));
  const State x = make_state(random_vec(rng), random_vec(rng));
  const RefPoint r = make_ref(random_vec(rng), random_vec(rng), random_vec(rng));
  Eigen::MatrixXd a = Eigen::MatrixXd::Random(3, 5), da = Eigen::MatrixXd::Random(3, 5);
  Eigen::VectorXd y = Eigen::VectorXd::Random(5);
  const Vec3 u0 = adaptive_control(x, r, a, y, Gains{});
  const Vec3 u1 = adaptive_control(x, r, a + da, y, Gains{});
  const Vec3 expected = -pfar::rotation(x.q[2]).transpose() * (da * y);
  EXPECT_LT((u1 - u0 - expected).norm(), 1e-12);
}

TEST(Adaptation, ZeroOnReference) {
  const RefPoint r = make_ref(Vec3(1, 1, 0), Vec3(0.2, 0, 0), Vec3::Zero());
  const Eigen::MatrixXd adot =
      adaptation_law(make_state(r.q, r.qdot), r, Eigen::VectorXd::Ones(4), Gains{});
  EXPECT_EQ(adot, Eigen::MatrixXd::Zero(3, 4));
}

TEST(Adaptation, OuterProductByHand) {
  const RefPoint r;
  const State x = make_state(Vec3::Zero(), Vec3(1, 0, 0));  // s = (1, 0, 0)
  Eigen::VectorXd y = Eigen::VectorXd::Zero(4);
  y[0] = 1.0;
  const Eigen::MatrixXd adot = adaptation_law(x, r, y, Gains{});
  Eigen::MatrixXd expected = Eigen::MatrixXd::Zero(3, 4);
  expected(0, 0) = 1.0;
  EXPECT_EQ(adot, expected);
}

TEST(Adaptation, RankAtMostOne) {
  Stream rng(Key::from_seed(6));
  for (int i = 0; i < 20; ++i) {
    const State x = make_state(random_vec(rng), random_vec(rng));
    const RefPoint r = make_ref(random_vec(rng), random_vec(rng), random_vec(rng));
    const Eigen::VectorXd y = Eigen::VectorXd::Random(6);
    const Eigen::MatrixXd adot = adaptation_law(x, r, y, Gains{});
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(adot);
    const auto sv = svd.singularValues();
    EXPECT_LT(sv[1], 1e-12 * std::max(1.0, sv[0]));
  }
}

TEST(Pid, FeedForwardOnly) {
  const RefPoint r = make_ref(Vec3(0, 0, 0.3), Vec3::Zero(), Vec3(0.5, -0.2, 0.1));
  const Vec3 u = pid_control(make_state(r.q, r.qdot), r, Vec3::Zero(), PidGains{});
  EXPECT_LT((u - pfar::rotation(0.3).transpose() * (pfar::gravity() + r.qddot)).norm(), 1e-14);
}

TEST(Pid, ProportionalByHand) {
  PidGains g;
  g.kp = Mat3::Identity();
  g.ki = Mat3::Zero();
  g.kd = Mat3::Zero();
  const Vec3 u = pid_control(make_state(Vec3(1, 0, 0), Vec3::Zero()), RefPoint{}, Vec3::Zero(), g);
  EXPECT_EQ(u, Vec3(-1, 9.81, 0));
}

TEST(Pid, GainMapping) {
  Gains g;
  g.lambda = Mat3::Identity();
  g.k = 10.0 * Mat3::Identity();
  g.gamma = 10.0 * Mat3::Identity();
  const PidGains p = pid_from_adaptive(g);
  EXPECT_EQ(p.kp, 20.0 * Mat3::Identity());
  EXPECT_EQ(p.ki, 10.0 * Mat3::Identity());
  EXPECT_EQ(p.kd, 11.0 * Mat3::Identity());
}

TEST(PdCollect, GravityCompensationOnly) {
  const RefPoint r = make_ref(Vec3(0, 0, -0.2), Vec3::Zero(), Vec3(3, 3, 3));
  const Vec3 u = pd_collect_control(make_state(r.q, r.qdot), r);
  EXPECT_LT((u - pfar::rotation(-0.2).transpose() * pfar::gravity()).norm(), 1e-14);
}

TEST(PdCollect, VerticalErrorByHand) {
  const Vec3 u = pd_collect_control(make_state(Vec3(0, 1, 0), Vec3::Zero()), RefPoint{});
  EXPECT_LT((u - Vec3(0, 9.81 - 10.0, 0)).norm(), 1e-14);
}

TEST(PdCollect, RejectsNonPositiveGains) {
  EXPECT_THROW(PdCollectController(0.0, 0.1), ConfigError);
  EXPECT_THROW(PdCollectController(10.0, -1.0), ConfigError);
}

TEST(FeatureNetwork, ShapeAndRange) {
  const nn::Mlp net = make_feature_network(Key::from_seed(7), 32, true);
  const FeatureMap y = FeatureMap::network(net);
  EXPECT_EQ(y.dim(), 32u);
  Stream rng(Key::from_seed(8));
  const Eigen::VectorXd v = y(make_state(random_vec(rng, 5), random_vec(rng, 5)));
  EXPECT_EQ(v.size(), 32);
  EXPECT_LE(v.cwiseAbs().maxCoeff(), 1.0);
}

TEST(Equivalence, PidAndAdaptiveTrajectoriesAgree) {
  for (std::uint64_t seed = 0; seed < 3; ++seed)
    EXPECT_LT(coml::testing::pid_adaptive_gap(seed), 1e-8) << "seed " << seed;
}

TEST(Equivalence, GapShrinksWithStep) {
  // The gap is RK4 quadrature of the reference, fourth order in dt.
  const double coarse = coml::testing::pid_adaptive_gap(0, 5.0, 0.01);
  const double fine = coml::testing::pid_adaptive_gap(0, 5.0, 0.005);
  EXPECT_GT(coarse / fine, 8.0);
}

TEST(Convergence, MatchedForceIsCancelled) {
  const coml::testing::ConvergenceRun run = coml::testing::matched_force_run(0);
  EXPECT_GT(run.peak, 1e-4);
  EXPECT_LT(run.final, 0.01 * run.peak);
}

}  // namespace
}  // namespace coml::control
