#include "coml/ad/adam.hpp"

#include <cmath>
#include <string>

#include "coml/errors.hpp"

namespace coml::ad {

AdamState AdamState::zeros_like(const std::vector<Tensor>& params) {
  AdamState s;
  for (const Tensor& p : params) {
    s.m.emplace_back(p.shape(), 0.0);
    s.v.emplace_back(p.shape(), 0.0);
  }
  return s;
}

void adam_step(std::vector<Tensor>& params, const std::vector<Tensor>& grads,
               AdamState& state, std::size_t step, const AdamConfig& cfg) {
  if (step < 1) throw Error("adam_step: step index must be >= 1");
  if (grads.size() != params.size() || state.m.size() != params.size() ||
      state.v.size() != params.size()) {
    throw ShapeError("adam_step: parameter/gradient/state count mismatch");
  }
  for (std::size_t k = 0; k < params.size(); ++k) {
    if (!(grads[k].shape() == params[k].shape()) ||
        !(state.m[k].shape() == params[k].shape()) ||
        !(state.v[k].shape() == params[k].shape())) {
      throw ShapeError("adam_step: shape mismatch for parameter " +
                       std::to_string(k) + " " + params[k].shape().str() +
                       " vs gradient " + grads[k].shape().str());
    }
  }
  const double t = static_cast<double>(step);
  const double c1 = 1.0 - std::pow(cfg.beta1, t);
  const double c2 = 1.0 - std::pow(cfg.beta2, t);
  for (std::size_t k = 0; k < params.size(); ++k) {
    double* p = params[k].data();
    double* m = state.m[k].data();
    double* v = state.v[k].data();
    const double* g = grads[k].data();
    for (std::size_t i = 0, n = params[k].size(); i < n; ++i) {
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
      const double mhat = m[i] / c1;
      const double vhat = v[i] / c2;
      p[i] -= cfg.step_size * mhat / (std::sqrt(vhat) + cfg.epsilon);
    }
  }
}

}  // namespace coml::ad
