#pragma once

#include <cstddef>
#include <vector>

#include "coml/ad/tensor.hpp"

namespace coml::ad {

struct AdamConfig {
  double step_size = 1e-2;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// First and second moment estimates, one tensor per parameter.
struct AdamState {
  std::vector<Tensor> m;
  std::vector<Tensor> v;

  static AdamState zeros_like(const std::vector<Tensor>& params);
};

// One bias-corrected Adam update at 1-based `step`. Updates `params` and
// `state` in place.
void adam_step(std::vector<Tensor>& params, const std::vector<Tensor>& grads,
               AdamState& state, std::size_t step, const AdamConfig& cfg);

}  // namespace coml::ad
