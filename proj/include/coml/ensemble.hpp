#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "coml/ad/tape.hpp"
#include "coml/nn.hpp"
#include "coml/pfar.hpp"
#include "coml/random.hpp"

namespace coml::ensemble {

using pfar::State;
using pfar::Vec3;
using pfar::Vec6;

// Samples (t_k, x_k, u_k), k = 0..N; tuple k is (t_k, x_k, u_k, t_{k+1},
// x_{k+1}) with u_k held over [t_k, t_{k+1}).
struct TrajectoryLog {
  std::size_t id = 0;
  std::vector<double> t;
  std::vector<Vec6> x;
  std::vector<Vec3> u;

  std::size_t tuples() const { return t.empty() ? 0 : t.size() - 1; }
  // Throws ParseError unless sizes agree and time strictly increases.
  void validate() const;
};

struct EnsembleConfig {
  double mu = 1e-4;
  std::size_t epochs = 1000;
  double step_size = 1e-2;
  double batch_fraction = 0.25;
  double train_fraction = 0.75;
  std::size_t width = 32;
  bool residual = true;  // learn only the force residual of (q, qdot)
  bool normalize_inputs = true;

  void validate() const;
};

// Residual form: (qdot, -g + R(phi) u + MLP(q, qdot)), MLP 6 -> 3.
// Generic form: MLP(q, qdot, u), 9 -> 6.
struct EnsembleModel {
  nn::Mlp net;
  bool residual = true;
};

EnsembleModel init_model(const Key& key, const EnsembleConfig& cfg);

Vec6 model_derivative(const EnsembleModel& model, const State& x,
                      const Vec3& u);

// Batched taped derivative: x [B, 6], u [B, 3] -> [B, 6].
ad::Var model_derivative(std::span<const ad::Var> params,
                         const EnsembleModel& shape_of, ad::Var input_scale,
                         ad::Var x, ad::Var u);

// Tuples gathered into row batches.
struct TupleBatch {
  ad::Tensor x;       // [n, 6]
  ad::Tensor u;       // [n, 3]
  ad::Tensor dt;      // [n, 1]
  ad::Tensor x_next;  // [n, 6]
  std::size_t size() const { return x.rows(); }
};
TupleBatch gather_tuples(const TrajectoryLog& log,
                         std::span<const std::size_t> idx);

// Mean over rows of |x_next - RK4(x, u, dt)|^2 on the tape.
ad::Var one_step_loss(std::span<const ad::Var> params,
                      const EnsembleModel& shape_of, ad::Var input_scale,
                      const TupleBatch& batch);

// Same loss without a tape.
double one_step_mse(const EnsembleModel& model, const TupleBatch& batch);
// Mean squared one-step error of the known-physics model with no residual.
double zero_residual_mse(const TupleBatch& batch);

struct CurveRow {
  std::size_t epoch = 0;
  double train_loss = 0.0;  // mean minibatch objective (epoch 0: full split)
  double valid_loss = 0.0;
  double best_valid = 0.0;  // running minimum of valid_loss
};

struct TrainResult {
  EnsembleModel model;  // lowest validation loss
  std::size_t best_epoch = 0;
  double best_valid = 0.0;
  std::vector<CurveRow> curve;
  std::vector<std::size_t> train_idx, valid_idx;
};

// Requires at least 8 tuples.
TrainResult train_model(const TrajectoryLog& log, const Key& key,
                        const EnsembleConfig& cfg);

// One model per log; the model for a log with id i is trained from
// key.fold(i), so the result does not depend on the order of `logs`.
std::vector<TrainResult> train_ensemble(std::span<const TrajectoryLog> logs,
                                        const Key& key,
                                        const EnsembleConfig& cfg,
                                        std::size_t threads = 1);

}  // namespace coml::ensemble
