#pragma once

#include <Eigen/Core>
#include <cstddef>
#include <functional>
#include <limits>
#include <span>
#include <vector>

#include "coml/ad/adam.hpp"
#include "coml/ad/tape.hpp"
#include "coml/ensemble.hpp"
#include "coml/nn.hpp"
#include "coml/random.hpp"

// Meta-learning of adaptive-control features with ridge regression as the
// per-trajectory base learner.
namespace coml::acmrr {

using pfar::Vec3;
using pfar::Vec6;

struct AcmrrConfig {
  double mu_ridge = 1e-4;
  double mu = 1e-4;
  std::size_t steps = 5000;
  double step_size = 1e-2;
  double subset_fraction = 0.25;
  double train_fraction = 0.75;
  // Subtract gravity inside the Euler step so that A y models only the
  // unknown force. When false the prediction is qdot + dt (R u + A y).
  bool include_gravity = true;
  std::size_t width = 32;
  bool normalize_inputs = true;
  std::size_t threads = 1;

  void validate() const;
};

// qdot_k + dt (R(phi_k) u_k - g + A y).
Vec3 euler_predict(const Vec6& x, const Vec3& u, double dt,
                   const Eigen::MatrixXd& a, const Eigen::VectorXd& y,
                   bool include_gravity = true);

// Rows of a trajectory in regression form: the Euler residual target
// qdot_{k+1} - qdot_k - dt (R u_k - g) is matched by dt A y(x_k).
struct RidgeData {
  Eigen::MatrixXd x;       // [n, 6]
  Eigen::MatrixXd target;  // [n, 3]
  Eigen::VectorXd dt;      // [n]
  std::size_t size() const { return static_cast<std::size_t>(x.rows()); }
};
RidgeData make_ridge_data(const ensemble::TrajectoryLog& log,
                          std::span<const std::size_t> idx,
                          bool include_gravity = true);

// argmin_A sum_k |target_k - A z_k|^2 + mu |A|_F^2 with z_k = dt_k y_k, via
// the normal equations (Z^T Z + mu I) A^T = Z^T target. Returns A [3, p].
Eigen::MatrixXd ridge_adapt(const Eigen::MatrixXd& z,
                            const Eigen::MatrixXd& target, double mu);
// Taped: z [n, p], target [n, 3] -> A^T [p, 3].
ad::Var ridge_adapt(ad::Var z, ad::Var target, double mu);

// Mean over rows of |target - z A^T|^2.
double task_loss(const Eigen::MatrixXd& z, const Eigen::MatrixXd& target,
                 const Eigen::MatrixXd& a);
ad::Var task_loss(ad::Var z, ad::Var target, ad::Var a_t);

// Features scaled per row by dt: z = dt * y(x).
Eigen::MatrixXd scaled_features(const nn::Mlp& features, const RidgeData& d);

struct AcmrrTask {
  RidgeData train;
  RidgeData valid;
  std::size_t subset = 0;  // ridge rows sampled per step
};

// 75/25 split of every log, task j split with key.fold(j).
std::vector<AcmrrTask> make_tasks(std::span<const ensemble::TrajectoryLog> logs,
                                  const Key& key, const AcmrrConfig& cfg);

struct LossEval {
  double loss = 0.0;
  std::vector<ad::Tensor> grad;
};

// (1/M) (sum_j loss_j + mu |theta|^2) where loss_j is the meta-train loss of
// task j with A fitted on `subsets[j]` (indices into the task's train rows).
LossEval acmrr_meta_loss(const nn::Mlp& features,
                         std::span<const AcmrrTask> tasks,
                         std::span<const std::vector<std::size_t>> subsets,
                         const AcmrrConfig& cfg, bool with_grad);

// Mean over tasks of the validation loss with A fitted on all train rows.
double acmrr_valid_loss(const nn::Mlp& features,
                        std::span<const AcmrrTask> tasks,
                        const AcmrrConfig& cfg);

// Ridge subsets for step `step`, drawn from key.fold(step).fold(j).
std::vector<std::vector<std::size_t>> sample_subsets(
    std::span<const AcmrrTask> tasks, const Key& key, std::size_t step);

struct CurveRow {
  std::size_t step = 0;
  double train_loss = 0.0;
  double valid_loss = 0.0;
};

struct AcmrrState {
  nn::Mlp params;
  ad::AdamState adam;
  std::size_t next_step = 0;
  nn::Mlp best;
  std::size_t best_step = 0;
  double best_valid = std::numeric_limits<double>::infinity();
  std::vector<CurveRow> curve;
  bool finished = false;
};

using StepCallback = std::function<void(const AcmrrState&)>;

AcmrrState acmrr_meta_train(std::span<const ensemble::TrajectoryLog> logs,
                            const Key& key, const AcmrrConfig& cfg,
                            const AcmrrState* resume = nullptr,
                            const StepCallback& on_step = {},
                            std::size_t stop_after =
                                std::numeric_limits<std::size_t>::max());

}  // namespace coml::acmrr
