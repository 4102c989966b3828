#include "coml/acmrr.hpp"

#include <Eigen/Cholesky>
#include <algorithm>
#include <cmath>

#include "coml/controllers.hpp"
#include "coml/errors.hpp"
#include "coml/parallel.hpp"

namespace coml::acmrr {

namespace {

ad::Tensor to_tensor(const Eigen::MatrixXd& m) {
  ad::Tensor t(ad::Shape{static_cast<std::size_t>(m.rows()),
                         static_cast<std::size_t>(m.cols())});
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c)
      t.at(static_cast<std::size_t>(r), static_cast<std::size_t>(c)) = m(r, c);
  return t;
}

ad::Tensor column(const Eigen::VectorXd& v) {
  return ad::Tensor(ad::Shape{static_cast<std::size_t>(v.size()), 1},
                    std::vector<double>(v.data(), v.data() + v.size()));
}

struct TaskResult {
  double loss = 0.0;
  std::vector<ad::Tensor> grad;
};

TaskResult task_meta_loss(const nn::Mlp& features, const AcmrrTask& task,
                          std::span<const std::size_t> subset, double mu_ridge,
                          bool with_grad) {
  ad::Tape tape;
  std::vector<ad::Var> p;
  for (const ad::Tensor& t : features.params)
    p.push_back(with_grad ? tape.input(t) : tape.constant(t));
  const ad::Var scale = tape.constant(features.input_scale);
  const ad::Var x = tape.constant(to_tensor(task.train.x));
  const ad::Var y = nn::forward(p, features, scale, x);
  const ad::Var z = y * tape.constant(column(task.train.dt));
  const ad::Var target = tape.constant(to_tensor(task.train.target));

  const std::size_t dim = features.output_size();
  std::vector<std::int64_t> zi, ti;
  zi.reserve(subset.size() * dim);
  ti.reserve(subset.size() * 3);
  for (std::size_t r : subset) {
    for (std::size_t c = 0; c < dim; ++c) zi.push_back(static_cast<std::int64_t>(r * dim + c));
    for (std::size_t c = 0; c < 3; ++c) ti.push_back(static_cast<std::int64_t>(r * 3 + c));
  }
  const ad::Var zs = ad::gather(z, std::move(zi), ad::Shape{subset.size(), dim});
  const ad::Var ts = ad::gather(target, std::move(ti), ad::Shape{subset.size(), 3});
  const ad::Var a_t = ridge_adapt(zs, ts, mu_ridge);
  const ad::Var loss = task_loss(z, target, a_t);
  TaskResult res;
  res.loss = loss.value().item();
  if (with_grad) res.grad = tape.gradient(loss);
  return res;
}

}  // namespace

void AcmrrConfig::validate() const {
  if (!(mu_ridge > 0.0)) throw ConfigError("acmrr.mu_ridge must be > 0");
  if (!(mu >= 0.0)) throw ConfigError("acmrr.mu must be >= 0");
  if (!(step_size > 0.0)) throw ConfigError("acmrr.step_size must be > 0");
  if (!(subset_fraction > 0.0 && subset_fraction <= 1.0)) {
    throw ConfigError("acmrr.subset_fraction must be in (0, 1]");
  }
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    throw ConfigError("acmrr.train_fraction must be in (0, 1)");
  }
  if (width == 0) throw ConfigError("acmrr.width must be > 0");
}

Vec3 euler_predict(const Vec6& x, const Vec3& u, double dt,
                   const Eigen::MatrixXd& a, const Eigen::VectorXd& y,
                   bool include_gravity) {
  Vec3 acc = pfar::rotation(x[2]) * u + a * y;
  if (include_gravity) acc -= pfar::gravity();
  return x.tail<3>() + dt * acc;
}

RidgeData make_ridge_data(const ensemble::TrajectoryLog& log,
                          std::span<const std::size_t> idx,
                          bool include_gravity) {
  const auto n = static_cast<Eigen::Index>(idx.size());
  RidgeData d{Eigen::MatrixXd(n, 6), Eigen::MatrixXd(n, 3), Eigen::VectorXd(n)};
  for (Eigen::Index r = 0; r < n; ++r) {
    const std::size_t k = idx[static_cast<std::size_t>(r)];
    if (k >= log.tuples()) throw ShapeError("tuple index out of range");
    const Vec6& x = log.x[k];
    const double dt = log.t[k + 1] - log.t[k];
    const Vec3 known = euler_predict(x, log.u[k], dt, Eigen::MatrixXd::Zero(3, 1),
                                     Eigen::VectorXd::Zero(1), include_gravity);
    d.x.row(r) = x.transpose();
    d.target.row(r) = (log.x[k + 1].tail<3>() - known).transpose();
    d.dt[r] = dt;
  }
  return d;
}

Eigen::MatrixXd ridge_adapt(const Eigen::MatrixXd& z,
                            const Eigen::MatrixXd& target, double mu) {
  if (!(mu > 0.0)) throw ConfigError("ridge regularization must be > 0");
  Eigen::MatrixXd g = z.transpose() * z;
  g.diagonal().array() += mu;
  const Eigen::MatrixXd rhs = z.transpose() * target;
  return Eigen::LLT<Eigen::MatrixXd>(g).solve(rhs).transpose();
}

ad::Var ridge_adapt(ad::Var z, ad::Var target, double mu) {
  if (!(mu > 0.0)) throw ConfigError("ridge regularization must be > 0");
  ad::Tape& tape = *z.tape();
  const std::size_t p = z.shape().last();
  ad::Tensor eye(ad::Shape{p, p}, 0.0);
  for (std::size_t i = 0; i < p; ++i) eye.at(i, i) = mu;
  const ad::Var zt = ad::transpose(z);
  const ad::Var g = ad::matmul(zt, z) + tape.constant(std::move(eye));
  return ad::solve(g, ad::matmul(zt, target));
}

double task_loss(const Eigen::MatrixXd& z, const Eigen::MatrixXd& target,
                 const Eigen::MatrixXd& a) {
  if (z.rows() == 0) throw Error("task loss needs at least one tuple");
  return (target - z * a.transpose()).squaredNorm() / static_cast<double>(z.rows());
}

ad::Var task_loss(ad::Var z, ad::Var target, ad::Var a_t) {
  const double n = static_cast<double>(z.value().rows());
  return ad::sum(ad::square(target - ad::matmul(z, a_t))) * (1.0 / n);
}

Eigen::MatrixXd scaled_features(const nn::Mlp& features, const RidgeData& d) {
  return d.dt.asDiagonal() * features.eval_batch(d.x);
}

std::vector<AcmrrTask> make_tasks(std::span<const ensemble::TrajectoryLog> logs,
                                  const Key& key, const AcmrrConfig& cfg) {
  std::vector<AcmrrTask> tasks;
  for (std::size_t j = 0; j < logs.size(); ++j) {
    const ensemble::TrajectoryLog& log = logs[j];
    log.validate();
    const std::size_t n = log.tuples();
    const auto nt = static_cast<std::size_t>(
        std::floor(cfg.train_fraction * static_cast<double>(n)));
    if (nt < 1 || nt >= n) {
      throw ConfigError("trajectory " + std::to_string(log.id) +
                        " is too short for a train/valid split");
    }
    Stream rng(key.fold(j));
    const std::vector<std::size_t> perm = rng.permutation(n);
    std::vector<std::size_t> tr(perm.begin(), perm.begin() + nt);
    std::vector<std::size_t> va(perm.begin() + nt, perm.end());
    std::sort(tr.begin(), tr.end());
    std::sort(va.begin(), va.end());
    AcmrrTask t;
    t.train = make_ridge_data(log, tr, cfg.include_gravity);
    t.valid = make_ridge_data(log, va, cfg.include_gravity);
    t.subset = std::max<std::size_t>(
        1, static_cast<std::size_t>(
               std::floor(cfg.subset_fraction * static_cast<double>(nt))));
    tasks.push_back(std::move(t));
  }
  return tasks;
}

std::vector<std::vector<std::size_t>> sample_subsets(
    std::span<const AcmrrTask> tasks, const Key& key, std::size_t step) {
  std::vector<std::vector<std::size_t>> out;
  const Key k = key.fold(step);
  for (std::size_t j = 0; j < tasks.size(); ++j) {
    Stream rng(k.fold(j));
    out.push_back(rng.sample(tasks[j].train.size(), tasks[j].subset));
  }
  return out;
}

LossEval acmrr_meta_loss(const nn::Mlp& features,
                         std::span<const AcmrrTask> tasks,
                         std::span<const std::vector<std::size_t>> subsets,
                         const AcmrrConfig& cfg, bool with_grad) {
  if (tasks.empty()) throw Error("meta loss needs at least one task");
  if (subsets.size() != tasks.size()) throw ShapeError("one subset per task");
  std::vector<TaskResult> res(tasks.size());
  parallel_for(tasks.size(), cfg.threads, [&](std::size_t j) {
    res[j] = task_meta_loss(features, tasks[j], subsets[j], cfg.mu_ridge, with_grad);
  });
  const double m = static_cast<double>(tasks.size());
  LossEval out;
  double sum = 0.0;
  for (const TaskResult& r : res) sum += r.loss;
  out.loss = (sum + cfg.mu * nn::squared_norm(features.params)) / m;
  if (with_grad) {
    for (std::size_t i = 0; i < features.params.size(); ++i) {
      ad::Tensor g(features.params[i].shape(), 0.0);
      for (const TaskResult& r : res)
        for (std::size_t e = 0; e < g.size(); ++e) g[e] += r.grad[i][e];
      for (std::size_t e = 0; e < g.size(); ++e)
        g[e] = (g[e] + 2.0 * cfg.mu * features.params[i][e]) / m;
      out.grad.push_back(std::move(g));
    }
  }
  return out;
}

double acmrr_valid_loss(const nn::Mlp& features,
                        std::span<const AcmrrTask> tasks,
                        const AcmrrConfig& cfg) {
  std::vector<double> losses(tasks.size());
  parallel_for(tasks.size(), cfg.threads, [&](std::size_t j) {
    const Eigen::MatrixXd a = ridge_adapt(scaled_features(features, tasks[j].train),
                                          tasks[j].train.target, cfg.mu_ridge);
    losses[j] = task_loss(scaled_features(features, tasks[j].valid),
                          tasks[j].valid.target, a);
  });
  double sum = 0.0;
  for (double l : losses) sum += l;
  return sum / static_cast<double>(tasks.size());
}

AcmrrState acmrr_meta_train(std::span<const ensemble::TrajectoryLog> logs,
                            const Key& key, const AcmrrConfig& cfg,
                            const AcmrrState* resume,
                            const StepCallback& on_step,
                            std::size_t stop_after) {
  cfg.validate();
  if (logs.empty()) throw ConfigError("ACMRR needs at least one trajectory");
  const std::vector<AcmrrTask> tasks = make_tasks(logs, key.split("split"), cfg);
  const Key subset_key = key.split("subsets");

  AcmrrState st;
  if (resume) {
    st = *resume;
  } else {
    st.params = control::make_feature_network(key.split("init").split("features"),
                                              cfg.width, cfg.normalize_inputs);
    st.adam = ad::AdamState::zeros_like(st.params.params);
    st.best = st.params;
  }
  ad::AdamConfig adam;
  adam.step_size = cfg.step_size;

  std::size_t processed = 0;
  while (!st.finished && processed < stop_after) {
    const std::size_t s = st.next_step;
    const bool update = s < cfg.steps;
    const auto subsets = sample_subsets(tasks, subset_key, s);
    const LossEval tr = acmrr_meta_loss(st.params, tasks, subsets, cfg, update);
    const double va = acmrr_valid_loss(st.params, tasks, cfg);
    st.curve.push_back({s, tr.loss, va});
    if (s == 0 || va < st.best_valid) {
      st.best_valid = va;
      st.best_step = s;
      st.best = st.params;
    }
    if (update) {
      ad::adam_step(st.params.params, tr.grad, st.adam, s + 1, adam);
      st.next_step = s + 1;
    } else {
      st.finished = true;
    }
    ++processed;
    if (on_step) on_step(st);
  }
  return st;
}

}  // namespace coml::acmrr
