#include "coml/ensemble.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "coml/ad/adam.hpp"
#include "coml/errors.hpp"
#include "coml/parallel.hpp"

namespace coml::ensemble {

void TrajectoryLog::validate() const {
  if (x.size() != t.size() || u.size() != t.size()) {
    throw ParseError("trajectory log columns have different lengths", 0);
  }
  for (std::size_t k = 0; k + 1 < t.size(); ++k) {
    if (!(t[k + 1] > t[k])) {
      // +2: header line and 1-based numbering
      throw ParseError("time column is not strictly increasing", k + 3);
    }
  }
}

void EnsembleConfig::validate() const {
  if (!(mu >= 0.0)) throw ConfigError("ensemble.mu must be >= 0");
  if (!(step_size > 0.0)) throw ConfigError("ensemble.step_size must be > 0");
  if (!(batch_fraction > 0.0 && batch_fraction <= 1.0)) {
    throw ConfigError("ensemble.batch_fraction must be in (0, 1]");
  }
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    throw ConfigError("ensemble.train_fraction must be in (0, 1)");
  }
  if (width == 0) throw ConfigError("ensemble.width must be > 0");
}

EnsembleModel init_model(const Key& key, const EnsembleConfig& cfg) {
  EnsembleModel m;
  m.residual = cfg.residual;
  ad::Tensor scale = nn::state_input_scale(cfg.normalize_inputs);
  if (cfg.residual) {
    m.net = nn::glorot_mlp(key, {6, cfg.width, cfg.width, 3}, true, scale);
  } else {
    std::vector<double> s = scale.values();
    for (int i = 0; i < 3; ++i) s.push_back(cfg.normalize_inputs ? 0.1 : 1.0);
    m.net = nn::glorot_mlp(key, {9, cfg.width, cfg.width, 6}, true,
                           ad::Tensor::vector(std::move(s)));
  }
  return m;
}

Vec6 model_derivative(const EnsembleModel& model, const State& x,
                      const Vec3& u) {
  const Vec6 xs = x.stacked();
  if (model.residual) {
    const Eigen::VectorXd f = model.net.eval(std::span<const double>(xs.data(), 6));
    return pfar::dynamics_with_force(x, u, Vec3(f[0], f[1], f[2]));
  }
  double in[9];
  std::copy(xs.data(), xs.data() + 6, in);
  std::copy(u.data(), u.data() + 3, in + 6);
  const Eigen::VectorXd f = model.net.eval(in);
  return Vec6(f);
}

ad::Var model_derivative(std::span<const ad::Var> params,
                         const EnsembleModel& shape_of, ad::Var input_scale,
                         ad::Var x, ad::Var u) {
  if (!shape_of.residual) {
    return nn::forward(params, shape_of.net, input_scale, ad::concat({x, u}));
  }
  ad::Tape& tape = *x.tape();
  const ad::Var g = tape.constant(ad::Tensor::vector({0.0, pfar::kGravity, 0.0}));
  const ad::Var force = nn::forward(params, shape_of.net, input_scale, x);
  const ad::Var qdd = ad::rotate(ad::slice(x, 2, 3), u, false) - g + force;
  return ad::concat({ad::slice(x, 3, 6), qdd});
}

TupleBatch gather_tuples(const TrajectoryLog& log,
                         std::span<const std::size_t> idx) {
  const std::size_t n = idx.size();
  TupleBatch b{ad::Tensor(ad::Shape{n, 6}), ad::Tensor(ad::Shape{n, 3}),
               ad::Tensor(ad::Shape{n, 1}), ad::Tensor(ad::Shape{n, 6})};
  for (std::size_t r = 0; r < n; ++r) {
    const std::size_t k = idx[r];
    if (k >= log.tuples()) throw ShapeError("tuple index out of range");
    for (std::size_t c = 0; c < 6; ++c) {
      b.x.at(r, c) = log.x[k][c];
      b.x_next.at(r, c) = log.x[k + 1][c];
    }
    for (std::size_t c = 0; c < 3; ++c) b.u.at(r, c) = log.u[k][c];
    b.dt[r] = log.t[k + 1] - log.t[k];
  }
  return b;
}

ad::Var one_step_loss(std::span<const ad::Var> params,
                      const EnsembleModel& shape_of, ad::Var input_scale,
                      const TupleBatch& batch) {
  ad::Tape& tape = *input_scale.tape();
  const ad::Var x = tape.constant(batch.x);
  const ad::Var u = tape.constant(batch.u);
  const ad::Var dt = tape.constant(batch.dt);
  const ad::Var half = dt * 0.5;
  auto f = [&](ad::Var s) {
    return model_derivative(params, shape_of, input_scale, s, u);
  };
  const ad::Var k1 = f(x);
  const ad::Var k2 = f(x + k1 * half);
  const ad::Var k3 = f(x + k2 * half);
  const ad::Var k4 = f(x + k3 * dt);
  const ad::Var pred =
      x + (k1 + 2.0 * k2 + 2.0 * k3 + k4) * (dt * (1.0 / 6.0));
  const ad::Var err = tape.constant(batch.x_next) - pred;
  return ad::sum(ad::square(err)) * (1.0 / static_cast<double>(batch.size()));
}

namespace {

template <class Deriv>
double plain_one_step_mse(const TupleBatch& b, const Deriv& f) {
  double total = 0.0;
  for (std::size_t r = 0; r < b.size(); ++r) {
    Vec6 x;
    Vec3 u;
    for (int c = 0; c < 6; ++c) x[c] = b.x.at(r, c);
    for (int c = 0; c < 3; ++c) u[c] = b.u.at(r, c);
    const double h = b.dt[r];
    auto d = [&](const Vec6& s) { return f(State::from_stacked(s), u); };
    const Vec6 k1 = d(x);
    const Vec6 k2 = d(x + 0.5 * h * k1);
    const Vec6 k3 = d(x + 0.5 * h * k2);
    const Vec6 k4 = d(x + h * k3);
    const Vec6 pred = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    for (int c = 0; c < 6; ++c) {
      const double e = b.x_next.at(r, c) - pred[c];
      total += e * e;
    }
  }
  return total / static_cast<double>(b.size());
}

double taped_mse(const EnsembleModel& model, const TupleBatch& batch) {
  ad::Tape tape;
  std::vector<ad::Var> p;
  for (const ad::Tensor& t : model.net.params) p.push_back(tape.constant(t));
  const ad::Var scale = tape.constant(model.net.input_scale);
  return one_step_loss(p, model, scale, batch).value().item();
}

}  // namespace

double one_step_mse(const EnsembleModel& model, const TupleBatch& batch) {
  return plain_one_step_mse(batch, [&](const State& s, const Vec3& u) {
    return model_derivative(model, s, u);
  });
}

double zero_residual_mse(const TupleBatch& batch) {
  return plain_one_step_mse(batch, [](const State& s, const Vec3& u) {
    return pfar::dynamics_with_force(s, u, Vec3::Zero());
  });
}

TrainResult train_model(const TrajectoryLog& log, const Key& key,
                        const EnsembleConfig& cfg) {
  cfg.validate();
  log.validate();
  const std::size_t n = log.tuples();
  if (n < 8) {
    throw ConfigError("trajectory " + std::to_string(log.id) + " has " +
                      std::to_string(n) + " tuples; at least 8 are needed");
  }
  TrainResult res;
  {
    Stream rng(key.split("split"));
    const std::vector<std::size_t> perm = rng.permutation(n);
    const auto ntrain = static_cast<std::size_t>(
        std::floor(cfg.train_fraction * static_cast<double>(n)));
    res.train_idx.assign(perm.begin(), perm.begin() + ntrain);
    res.valid_idx.assign(perm.begin() + ntrain, perm.end());
    std::sort(res.train_idx.begin(), res.train_idx.end());
    std::sort(res.valid_idx.begin(), res.valid_idx.end());
  }
  const std::size_t ntrain = res.train_idx.size();
  std::size_t batch = static_cast<std::size_t>(
      std::floor(cfg.batch_fraction * static_cast<double>(ntrain)));
  if (batch < 1 || batch > ntrain) batch = ntrain;
  const std::size_t nbatches = ntrain / batch;
  const double reg = cfg.mu / static_cast<double>(ntrain);

  EnsembleModel model = init_model(key.split("init"), cfg);
  const TupleBatch train_all = gather_tuples(log, res.train_idx);
  const TupleBatch valid_all = gather_tuples(log, res.valid_idx);

  res.model = model;
  res.best_epoch = 0;
  res.best_valid = taped_mse(model, valid_all);
  res.curve.push_back({0,
                       taped_mse(model, train_all) +
                           reg * nn::squared_norm(model.net.params),
                       res.best_valid, res.best_valid});

  ad::AdamConfig adam;
  adam.step_size = cfg.step_size;
  ad::AdamState state = ad::AdamState::zeros_like(model.net.params);
  std::size_t step = 0;
  std::vector<std::size_t> idx(batch);
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    Stream rng(key.split("epoch").fold(epoch));
    const std::vector<std::size_t> order = rng.permutation(ntrain);
    double epoch_loss = 0.0;
    for (std::size_t b = 0; b < nbatches; ++b) {
      for (std::size_t i = 0; i < batch; ++i)
        idx[i] = res.train_idx[order[b * batch + i]];
      const TupleBatch tb = gather_tuples(log, idx);
      ad::Tape tape;
      std::vector<ad::Var> p;
      for (const ad::Tensor& t : model.net.params) p.push_back(tape.input(t));
      const ad::Var scale = tape.constant(model.net.input_scale);
      ad::Var loss = one_step_loss(p, model, scale, tb);
      for (const ad::Var& v : p) loss = loss + reg * ad::sum(ad::square(v));
      epoch_loss += loss.value().item();
      const std::vector<ad::Tensor> grads = tape.gradient(loss);
      ad::adam_step(model.net.params, grads, state, ++step, adam);
    }
    const double valid = taped_mse(model, valid_all);
    if (valid < res.best_valid) {
      res.best_valid = valid;
      res.best_epoch = epoch;
      res.model = model;
    }
    res.curve.push_back({epoch, epoch_loss / static_cast<double>(nbatches),
                         valid, res.best_valid});
  }
  return res;
}

std::vector<TrainResult> train_ensemble(std::span<const TrajectoryLog> logs,
                                        const Key& key,
                                        const EnsembleConfig& cfg,
                                        std::size_t threads) {
  if (logs.empty()) throw ConfigError("ensemble needs at least one trajectory");
  std::vector<TrainResult> out(logs.size());
  parallel_for(logs.size(), threads, [&](std::size_t j) {
    try {
      out[j] = train_model(logs[j], key.fold(logs[j].id), cfg);
    } catch (const Error& e) {
      throw Error("ensemble model for trajectory " +
                  std::to_string(logs[j].id) + ": " + e.what());
    }
  });
  return out;
}

}  // namespace coml::ensemble
