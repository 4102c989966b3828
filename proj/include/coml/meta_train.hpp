#pragma once

#include <cstddef>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "coml/ad/adam.hpp"
#include "coml/controllers.hpp"
#include "coml/ensemble.hpp"
#include "coml/nn.hpp"
#include "coml/random.hpp"
#include "coml/rollout.hpp"
#include "coml/trajgen.hpp"

namespace coml::meta {

struct MetaConfig {
  std::size_t n_refs = 10;
  double ref_duration = 5.0;  // s
  trajgen::WalkBounds walk;
  rollout::RolloutConfig rollout;  // horizon defaults to ref_duration
  double mu = 1e-4;
  std::size_t steps = 500;
  double step_size = 1e-2;
  double train_fraction = 0.75;
  double penalty = 1e6;  // per-task loss cap for divergent rollouts
  std::size_t width = 32;
  bool normalize_inputs = true;
  std::size_t threads = 1;

  void validate() const;
};

// theta = (feature network, log-Cholesky gains).
struct MetaParams {
  nn::Mlp features;
  control::GainParams gains;

  // W0, b0, W1, b1, lambda, k, gamma.
  std::vector<ad::Tensor> flatten() const;
  void assign(const std::vector<ad::Tensor>& flat);
  std::vector<std::string> names() const;
  control::Gains gain_matrices() const;
};

// Glorot feature network, zero gain parameters (identity gains).
MetaParams init_meta_params(const Key& key, const MetaConfig& cfg = {});

// Fresh references for meta-training; reference i comes from key.fold(i).
std::vector<trajgen::ReferenceTrajectory> make_meta_references(
    const Key& key, const MetaConfig& cfg);

struct Task {
  std::size_t ref = 0;
  std::size_t model = 0;
  friend bool operator<(const Task& a, const Task& b) {
    return a.model != b.model ? a.model < b.model : a.ref < b.ref;
  }
};

std::vector<Task> task_grid(std::span<const std::size_t> refs,
                            std::span<const std::size_t> models);

struct LossEval {
  double loss = 0.0;               // objective including regularization
  std::vector<ad::Tensor> grad;    // empty unless requested
  std::vector<double> task_losses; // per task, canonical order, capped
  std::size_t diverged = 0;
};

// (1/(|tasks| T)) (sum_ij integral c_ij + mu |theta|^2). Tasks are reduced
// in (model, ref) order regardless of the order given, so the result is
// bit-identical for any permutation of `tasks` and any thread count.
LossEval evaluate_meta_loss(const MetaParams& theta,
                            std::span<const trajgen::ReferenceTrajectory> refs,
                            std::span<const ensemble::EnsembleModel> models,
                            std::span<const Task> tasks, const MetaConfig& cfg,
                            double mu, bool with_grad);

inline double meta_loss(const MetaParams& theta,
                        std::span<const trajgen::ReferenceTrajectory> refs,
                        std::span<const ensemble::EnsembleModel> models,
                        std::span<const Task> tasks, const MetaConfig& cfg) {
  return evaluate_meta_loss(theta, refs, models, tasks, cfg, cfg.mu, false).loss;
}

struct MetaSplit {
  std::vector<std::size_t> train_refs, valid_refs;
  std::vector<std::size_t> train_models, valid_models;
};
// floor(fraction * n) of each for training, the rest for validation.
MetaSplit split_tasks(std::size_t n_refs, std::size_t n_models,
                      const Key& key, double fraction);

struct CurveRow {
  std::size_t step = 0;
  double train_loss = 0.0;
  double valid_loss = 0.0;
};

// Everything needed to continue training exactly where it stopped.
struct MetaTrainState {
  MetaParams params;       // parameters after `next_step` updates
  ad::AdamState adam;
  std::size_t next_step = 0;
  MetaParams best;
  std::size_t best_step = 0;
  double best_valid = std::numeric_limits<double>::infinity();
  std::vector<CurveRow> curve;  // one row per evaluated iterate
  bool finished = false;
};

using StepCallback = std::function<void(const MetaTrainState&)>;

// Adam on the training grid; every iterate 0..steps is also scored on the
// validation grid (mu = 0) and the lowest validation loss is kept (earliest
// on ties). Passing `resume` continues a saved state; `stop_after` limits the
// number of iterates processed in this call.
MetaTrainState meta_train(std::span<const ensemble::EnsembleModel> models,
                          std::span<const trajgen::ReferenceTrajectory> refs,
                          const Key& key, const MetaConfig& cfg,
                          const MetaTrainState* resume = nullptr,
                          const StepCallback& on_step = {},
                          std::size_t stop_after =
                              std::numeric_limits<std::size_t>::max());

}  // namespace coml::meta
