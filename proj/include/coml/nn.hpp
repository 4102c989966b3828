#pragma once

#include <Eigen/Core>
#include <span>
#include <string>
#include <vector>

#include "coml/ad/tape.hpp"
#include "coml/random.hpp"

namespace coml::nn {

// Fully-connected tanh network. Layer l maps a row batch through
// tanh(x W_l + b_l) with W_l stored [in, out]; the last layer skips the tanh
// when `linear_output` is set. Inputs are multiplied elementwise by a fixed,
// non-trainable scale before the first layer.
struct Mlp {
  std::vector<std::size_t> sizes;  // input, hidden..., output
  bool linear_output = false;
  ad::Tensor input_scale;          // [sizes.front()]
  std::vector<ad::Tensor> params;  // W0, b0, W1, b1, ...

  std::size_t layers() const { return sizes.size() - 1; }
  std::size_t input_size() const { return sizes.front(); }
  std::size_t output_size() const { return sizes.back(); }
  std::size_t parameter_count() const;
  std::vector<std::string> param_names() const;  // "W0", "b0", ...

  // Single-sample evaluation (no tape).
  Eigen::VectorXd eval(std::span<const double> input) const;
  // Row-batch evaluation (no tape): [B, in] -> [B, out].
  Eigen::MatrixXd eval_batch(const Eigen::MatrixXd& input) const;
};

// Glorot-uniform weights, zero biases.
Mlp glorot_mlp(const Key& key, std::vector<std::size_t> sizes,
               bool linear_output, ad::Tensor input_scale);

// Scale that maps (x, y, phi, xdot, ydot, phidot) to roughly unit range:
// positions / 10 m, angles / pi, velocities / 5 m/s.
ad::Tensor state_input_scale(bool enabled);

// Batched forward pass on a tape. `params` holds one Var per entry of
// Mlp::params (as inputs or constants); `x` is [B, in].
ad::Var forward(std::span<const ad::Var> params, const Mlp& shape_of,
                ad::Var input_scale, ad::Var x);

// Sum of squares of every parameter entry.
double squared_norm(std::span<const ad::Tensor> params);

}  // namespace coml::nn
