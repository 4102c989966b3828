#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <vector>

#include "coml/acmrr.hpp"
#include "coml/ensemble.hpp"
#include "coml/errors.hpp"
#include "coml/eval.hpp"
#include "coml/meta_train.hpp"
#include "scenarios.hpp"

namespace coml {
namespace {

using pfar::Vec3;
using pfar::Vec6;

std::vector<ensemble::TrajectoryLog> small_campaign(std::size_t n, double duration,
                                                    std::uint64_t seed = 1) {
  eval::CampaignConfig cfg;
  cfg.n_traj = n;
  cfg.duration = duration;
  std::vector<ensemble::TrajectoryLog> logs;
  for (eval::CampaignEntry& e : eval::collect_campaign(cfg, Key::from_seed(seed)))
    logs.push_back(std::move(e.log));
  return logs;
}

ensemble::EnsembleConfig quick_ensemble(std::size_t epochs) {
  ensemble::EnsembleConfig cfg;
  cfg.epochs = epochs;
  return cfg;
}

// Ensemble --------------------------------------------------------------

TEST(Ensemble, TupleTimeStepsComeFromTheLog) {
  const auto logs = small_campaign(1, 2.0);
  std::vector<std::size_t> idx(logs[0].tuples());
  std::iota(idx.begin(), idx.end(), 0);
  const ensemble::TupleBatch b = ensemble::gather_tuples(logs[0], idx);
  ASSERT_EQ(b.size(), 200u);
  for (std::size_t k = 0; k < b.size(); ++k) EXPECT_NEAR(b.dt[k], 0.01, 1e-12);
}

TEST(Ensemble, ZeroResidualMatchesKnownPhysics) {
  const auto logs = small_campaign(1, 2.0);
  ensemble::EnsembleModel model = ensemble::init_model(Key::from_seed(2), {});
  ad::Tensor& w_last = model.net.params[model.net.params.size() - 2];
  ad::Tensor& b_last = model.net.params.back();
  for (std::size_t i = 0; i < w_last.size(); ++i) w_last[i] = 0.0;
  for (std::size_t i = 0; i < b_last.size(); ++i) b_last[i] = 0.0;
  std::vector<std::size_t> idx(logs[0].tuples());
  std::iota(idx.begin(), idx.end(), 0);
  const ensemble::TupleBatch b = ensemble::gather_tuples(logs[0], idx);
  EXPECT_DOUBLE_EQ(ensemble::one_step_mse(model, b), ensemble::zero_residual_mse(b));
}

TEST(Ensemble, TapedLossMatchesPlain) {
  const auto logs = small_campaign(1, 2.0);
  const ensemble::EnsembleModel model = ensemble::init_model(Key::from_seed(3), {});
  std::vector<std::size_t> idx{0, 5, 17, 40, 99};
  const ensemble::TupleBatch b = ensemble::gather_tuples(logs[0], idx);
  ad::Tape tape;
  std::vector<ad::Var> p;
  for (const ad::Tensor& t : model.net.params) p.push_back(tape.input(t));
  const ad::Var l = ensemble::one_step_loss(p, model, tape.constant(model.net.input_scale), b);
  EXPECT_NEAR(l.value().item(), ensemble::one_step_mse(model, b), 1e-14);
}

TEST(Ensemble, TrainingKeepsBestValidation) {
  const auto logs = small_campaign(1, 5.0);
  const ensemble::TrainResult r = ensemble::train_model(logs[0], Key::from_seed(4), quick_ensemble(30));
  ASSERT_EQ(r.curve.size(), 31u);
  double best = r.curve[0].valid_loss;
  for (const auto& row : r.curve) {
    best = std::min(best, row.valid_loss);
    EXPECT_DOUBLE_EQ(row.best_valid, best);
  }
  EXPECT_DOUBLE_EQ(r.best_valid, best);
  EXPECT_DOUBLE_EQ(r.curve[r.best_epoch].valid_loss, best);
  EXPECT_LE(r.best_valid, r.curve[0].valid_loss);
}

TEST(Ensemble, SplitIsDisjointAndComplete) {
  const auto logs = small_campaign(1, 5.0);
  const ensemble::TrainResult r = ensemble::train_model(logs[0], Key::from_seed(5), quick_ensemble(1));
  const std::size_t n = logs[0].tuples();
  EXPECT_EQ(r.train_idx.size(), static_cast<std::size_t>(std::floor(0.75 * static_cast<double>(n))));
  std::set<std::size_t> all(r.train_idx.begin(), r.train_idx.end());
  for (std::size_t i : r.valid_idx) EXPECT_TRUE(all.insert(i).second);
  EXPECT_EQ(all.size(), n);
}

TEST(Ensemble, ModelsDoNotDependOnLogOrder) {
  auto logs = small_campaign(2, 2.0);
  const auto a = ensemble::train_ensemble(logs, Key::from_seed(6), quick_ensemble(5));
  std::reverse(logs.begin(), logs.end());
  const auto b = ensemble::train_ensemble(logs, Key::from_seed(6), quick_ensemble(5), 2);
  ASSERT_EQ(a.size(), 2u);
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t t = 0; t < a[i].model.net.params.size(); ++t)
      EXPECT_EQ(a[i].model.net.params[t], b[1 - i].model.net.params[t]);
}

TEST(Ensemble, ShortLogIsRejected) {
  auto logs = small_campaign(1, 2.0);
  logs[0].t.resize(5);
  logs[0].x.resize(5);
  logs[0].u.resize(5);
  EXPECT_THROW(ensemble::train_model(logs[0], Key::from_seed(7), quick_ensemble(1)), Error);
}

// Meta-training -------------------------------------------------------------

struct MetaFixture {
  meta::MetaConfig cfg;
  std::vector<trajgen::ReferenceTrajectory> refs;
  std::vector<ensemble::EnsembleModel> models;
  meta::MetaParams theta;

  MetaFixture() {
    cfg.n_refs = 3;
    cfg.ref_duration = 1.0;
    cfg.rollout.horizon = 1.0;
    refs = meta::make_meta_references(Key::from_seed(10), cfg);
    for (std::uint64_t j = 0; j < 2; ++j)
      models.push_back(ensemble::init_model(Key::from_seed(11 + j), {}));
    theta = meta::init_meta_params(Key::from_seed(13), cfg);
  }
};

TEST(Meta, InitialGainsAreIdentity) {
  const MetaFixture f;
  const control::Gains g = f.theta.gain_matrices();
  EXPECT_EQ(g.lambda, control::Mat3::Identity());
  EXPECT_EQ(g.k, control::Mat3::Identity());
  EXPECT_EQ(g.gamma, control::Mat3::Identity());
}

TEST(Meta, TaskGridIsTheProduct) {
  const std::vector<std::size_t> r{0, 2, 1}, m{1, 0};
  const auto grid = meta::task_grid(r, m);
  EXPECT_EQ(grid.size(), 6u);
  EXPECT_EQ(std::set<meta::Task>(grid.begin(), grid.end()).size(), 6u);
}

TEST(Meta, SplitSizes) {
  const meta::MetaSplit s = meta::split_tasks(10, 10, Key::from_seed(14), 0.75);
  EXPECT_EQ(s.train_refs.size(), 7u);
  EXPECT_EQ(s.valid_refs.size(), 3u);
  EXPECT_EQ(s.train_models.size(), 7u);
  EXPECT_EQ(s.valid_models.size(), 3u);
}

TEST(Meta, LossIsPermutationAndThreadInvariant) {
  MetaFixture f;
  const std::vector<std::size_t> r{0, 1, 2}, m{0, 1};
  std::vector<meta::Task> tasks = meta::task_grid(r, m);
  const meta::LossEval a = meta::evaluate_meta_loss(f.theta, f.refs, f.models, tasks, f.cfg, f.cfg.mu, true);
  std::reverse(tasks.begin(), tasks.end());
  f.cfg.threads = 2;
  const meta::LossEval b = meta::evaluate_meta_loss(f.theta, f.refs, f.models, tasks, f.cfg, f.cfg.mu, true);
  EXPECT_EQ(a.loss, b.loss);
  ASSERT_EQ(a.grad.size(), b.grad.size());
  for (std::size_t i = 0; i < a.grad.size(); ++i) EXPECT_EQ(a.grad[i], b.grad[i]);
}

TEST(Meta, RegularizerIsAdditive) {
  const MetaFixture f;
  const std::vector<std::size_t> r{0, 1}, m{0, 1};
  const std::vector<meta::Task> tasks = meta::task_grid(r, m);
  const double l0 = meta::evaluate_meta_loss(f.theta, f.refs, f.models, tasks, f.cfg, 0.0, false).loss;
  const double l1 = meta::evaluate_meta_loss(f.theta, f.refs, f.models, tasks, f.cfg, 0.5, false).loss;
  const double sq = nn::squared_norm(f.theta.flatten());
  EXPECT_NEAR(l1 - l0, 0.5 * sq / (4.0 * f.cfg.rollout.horizon), 1e-12 * l1);
}

TEST(Meta, TaskLossesAreAveraged) {
  const MetaFixture f;
  const std::vector<std::size_t> r{0, 1, 2}, m{0, 1};
  const std::vector<meta::Task> tasks = meta::task_grid(r, m);
  const meta::LossEval e = meta::evaluate_meta_loss(f.theta, f.refs, f.models, tasks, f.cfg, 0.0, false);
  ASSERT_EQ(e.task_losses.size(), 6u);
  const double mean = std::accumulate(e.task_losses.begin(), e.task_losses.end(), 0.0) / 6.0;
  EXPECT_NEAR(e.loss, mean, 1e-14 * mean);
}

TEST(Meta, ZeroStepsKeepsInitialParameters) {
  MetaFixture f;
  f.cfg.steps = 0;
  const meta::MetaTrainState s = meta::meta_train(f.models, f.refs, Key::from_seed(15), f.cfg);
  EXPECT_TRUE(s.finished);
  ASSERT_EQ(s.curve.size(), 1u);
  EXPECT_EQ(s.best_step, 0u);
  const auto init = meta::init_meta_params(Key::from_seed(15).split("init"), f.cfg).flatten();
  const auto best = s.best.flatten();
  ASSERT_EQ(best.size(), init.size());
  for (std::size_t i = 0; i < best.size(); ++i) EXPECT_EQ(best[i], init[i]);
}

TEST(Meta, ResumeMatchesUninterruptedRun) {
  MetaFixture f;
  f.cfg.steps = 3;
  const Key key = Key::from_seed(16);
  const meta::MetaTrainState full = meta::meta_train(f.models, f.refs, key, f.cfg);
  const meta::MetaTrainState part = meta::meta_train(f.models, f.refs, key, f.cfg, nullptr, {}, 2);
  EXPECT_FALSE(part.finished);
  const meta::MetaTrainState rest = meta::meta_train(f.models, f.refs, key, f.cfg, &part);
  EXPECT_TRUE(rest.finished);
  ASSERT_EQ(full.curve.size(), rest.curve.size());
  for (std::size_t i = 0; i < full.curve.size(); ++i) {
    EXPECT_EQ(full.curve[i].train_loss, rest.curve[i].train_loss);
    EXPECT_EQ(full.curve[i].valid_loss, rest.curve[i].valid_loss);
  }
  const auto a = full.best.flatten(), b = rest.best.flatten();
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i], b[i]);
}

TEST(Meta, GainsStayPositiveDefinite) {
  MetaFixture f;
  f.cfg.steps = 4;
  f.cfg.step_size = 0.5;
  meta::meta_train(f.models, f.refs, Key::from_seed(17), f.cfg, nullptr,
                   [](const meta::MetaTrainState& s) {
                     const control::Gains g = s.params.gain_matrices();
                     for (const control::Mat3* m : {&g.lambda, &g.k, &g.gamma})
                       EXPECT_GT(Eigen::SelfAdjointEigenSolver<control::Mat3>(*m).eigenvalues().minCoeff(), 0.0);
                   });
}

// ACMRR ------------------------------------------------------------------

TEST(Ridge, HugeRegularizerGivesZero) {
  const Eigen::MatrixXd z = Eigen::MatrixXd::Random(10, 4), t = Eigen::MatrixXd::Random(10, 3);
  EXPECT_LT(acmrr::ridge_adapt(z, t, 1e12).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(Ridge, ScalarFeatureByHand) {
  Eigen::MatrixXd z(3, 1), t(3, 3);
  z << 1, 2, 3;
  t << 1, 0, 2, 2, 1, 2, 3, 0, 2;
  const double mu = 0.5;
  const Eigen::MatrixXd a = acmrr::ridge_adapt(z, t, mu);
  // A_c = sum z t_c / (sum z^2 + mu) = (z . t_c) / 14.5
  EXPECT_NEAR(a(0, 0), 14.0 / 14.5, 1e-14);
  EXPECT_NEAR(a(1, 0), 2.0 / 14.5, 1e-14);
  EXPECT_NEAR(a(2, 0), 12.0 / 14.5, 1e-14);
}

TEST(Ridge, NormalEquationResidual) {
  Stream rng(Key::from_seed(18));
  Eigen::MatrixXd z(50, 32), t(50, 3);
  for (Eigen::Index i = 0; i < z.size(); ++i) z(i) = rng.normal() * 0.01;
  for (Eigen::Index i = 0; i < t.size(); ++i) t(i) = rng.normal() * 0.01;
  const double mu = 1e-4;
  const Eigen::MatrixXd a = acmrr::ridge_adapt(z, t, mu);
  const Eigen::MatrixXd res =
      (z.transpose() * z + mu * Eigen::MatrixXd::Identity(32, 32)) * a.transpose() - z.transpose() * t;
  EXPECT_LT(res.cwiseAbs().maxCoeff(), 1e-10);
}

TEST(Ridge, MatchesIterativeMinimization) {
  for (std::uint64_t s = 0; s < 5; ++s) EXPECT_LT(coml::testing::ridge_vs_iterative(s), 1e-6) << s;
}

TEST(Ridge, TapedMatchesPlainAndFiniteDifferences) {
  Stream rng(Key::from_seed(19));
  Eigen::MatrixXd z(4, 4), t(4, 3);
  for (Eigen::Index i = 0; i < z.size(); ++i) z(i) = rng.normal();
  for (Eigen::Index i = 0; i < t.size(); ++i) t(i) = rng.normal();
  const double mu = 0.1;
  auto tensor = [](const Eigen::MatrixXd& m) {
    std::vector<double> v;
    for (Eigen::Index r = 0; r < m.rows(); ++r)
      for (Eigen::Index c = 0; c < m.cols(); ++c) v.push_back(m(r, c));
    return ad::Tensor::matrix(static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols()), v);
  };
  auto plain_loss = [&](const Eigen::MatrixXd& zz) {
    return acmrr::task_loss(zz, t, acmrr::ridge_adapt(zz, t, mu));
  };
  ad::Tape tape;
  const ad::Var zv = tape.input(tensor(z));
  const ad::Var tv = tape.constant(tensor(t));
  const ad::Var l = acmrr::task_loss(zv, tv, acmrr::ridge_adapt(zv, tv, mu));
  EXPECT_NEAR(l.value().item(), plain_loss(z), 1e-13);
  const ad::Tensor g = tape.gradient(l)[0];
  const double h = 1e-6;
  for (Eigen::Index r = 0; r < 4; ++r)
    for (Eigen::Index c = 0; c < 4; ++c) {
      Eigen::MatrixXd zp = z, zm = z;
      zp(r, c) += h;
      zm(r, c) -= h;
      const double fd = (plain_loss(zp) - plain_loss(zm)) / (2 * h);
      const double ad = g.at(static_cast<std::size_t>(r), static_cast<std::size_t>(c));
      EXPECT_LT(std::abs(ad - fd), 1e-6 * std::max(1.0, std::abs(fd))) << r << "," << c;
    }
}

TEST(Acmrr, EulerPredictHoverAtRest) {
  const Vec3 u = pfar::rotation(0.2).transpose() * pfar::gravity();
  Vec6 x = Vec6::Zero();
  x[2] = 0.2;
  const Eigen::MatrixXd a = Eigen::MatrixXd::Zero(3, 4);
  EXPECT_LT(acmrr::euler_predict(x, u, 0.01, a, Eigen::VectorXd::Ones(4)).norm(), 1e-15);
}

TEST(Acmrr, RegressionTargetOfKnownForce) {
  // Exact Euler data with a constant force f: target_k = dt f.
  ensemble::TrajectoryLog log;
  const Vec3 f(0.3, -0.1, 0.05);
  Vec6 x = Vec6::Zero();
  for (int k = 0; k <= 10; ++k) {
    const Vec3 u(0.1 * k, 9.81, 0.0);
    log.t.push_back(0.01 * k);
    log.x.push_back(x);
    log.u.push_back(u);
    const Vec3 acc = pfar::rotation(x[2]) * u - pfar::gravity() + f;
    x.tail<3>() += 0.01 * acc;
    x.head<3>() += 0.01 * x.tail<3>();
  }
  std::vector<std::size_t> idx(10);
  std::iota(idx.begin(), idx.end(), 0);
  const acmrr::RidgeData d = acmrr::make_ridge_data(log, idx);
  for (std::size_t k = 0; k < 10; ++k)
    EXPECT_LT((d.target.row(static_cast<Eigen::Index>(k)).transpose() - 0.01 * f).norm(), 1e-12);
}

TEST(Acmrr, MetaLossRegularizerIsAdditive) {
  const auto logs = small_campaign(2, 2.0);
  acmrr::AcmrrConfig cfg;
  const auto tasks = acmrr::make_tasks(logs, Key::from_seed(20), cfg);
  const auto subsets = acmrr::sample_subsets(tasks, Key::from_seed(21), 0);
  const nn::Mlp net = control::make_feature_network(Key::from_seed(22), 32, true);
  cfg.mu = 0.0;
  const double l0 = acmrr::acmrr_meta_loss(net, tasks, subsets, cfg, false).loss;
  cfg.mu = 0.25;
  const double l1 = acmrr::acmrr_meta_loss(net, tasks, subsets, cfg, false).loss;
  EXPECT_NEAR(l1 - l0, 0.25 * nn::squared_norm(net.params) / 2.0, 1e-12 * l1);
}

TEST(Acmrr, SubsetSizeIsQuarterOfTrainRows) {
  const auto logs = small_campaign(2, 2.0);
  const acmrr::AcmrrConfig cfg;
  const auto tasks = acmrr::make_tasks(logs, Key::from_seed(23), cfg);
  const auto subsets = acmrr::sample_subsets(tasks, Key::from_seed(24), 3);
  for (std::size_t j = 0; j < tasks.size(); ++j) {
    EXPECT_EQ(tasks[j].train.size(), 150u);
    EXPECT_EQ(subsets[j].size(), 37u);
    EXPECT_EQ(std::set<std::size_t>(subsets[j].begin(), subsets[j].end()).size(), 37u);
  }
}

TEST(Acmrr, TrainingKeepsBestValidation) {
  const auto logs = small_campaign(2, 2.0);
  acmrr::AcmrrConfig cfg;
  cfg.steps = 5;
  const acmrr::AcmrrState s = acmrr::acmrr_meta_train(logs, Key::from_seed(25), cfg);
  ASSERT_EQ(s.curve.size(), 6u);
  double best = s.curve[0].valid_loss;
  std::size_t arg = 0;
  for (const auto& row : s.curve)
    if (row.valid_loss < best) {
      best = row.valid_loss;
      arg = row.step;
    }
  EXPECT_EQ(s.best_step, arg);
  EXPECT_DOUBLE_EQ(s.best_valid, best);
}

}  // namespace
}  // namespace coml
