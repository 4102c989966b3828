#include "coml/nn.hpp"

#include <cmath>
#include <numbers>

#include "coml/errors.hpp"

namespace coml::nn {

std::size_t Mlp::parameter_count() const {
  std::size_t n = 0;
  for (const ad::Tensor& p : params) n += p.size();
  return n;
}

std::vector<std::string> Mlp::param_names() const {
  std::vector<std::string> names;
  for (std::size_t l = 0; l < layers(); ++l) {
    names.push_back("W" + std::to_string(l));
    names.push_back("b" + std::to_string(l));
  }
  return names;
}

Eigen::VectorXd Mlp::eval(std::span<const double> input) const {
  if (input.size() != input_size()) {
    throw ShapeError("mlp input has " + std::to_string(input.size()) +
                     " entries, expected " + std::to_string(input_size()));
  }
  Eigen::VectorXd h(input.size());
  for (std::size_t i = 0; i < input.size(); ++i) h[i] = input[i] * input_scale[i];
  for (std::size_t l = 0; l < layers(); ++l) {
    const ad::Tensor& w = params[2 * l];
    const ad::Tensor& b = params[2 * l + 1];
    const std::size_t in = sizes[l], out = sizes[l + 1];
    Eigen::VectorXd next(out);
    for (std::size_t j = 0; j < out; ++j) {
      double s = b[j];
      for (std::size_t i = 0; i < in; ++i) s += h[i] * w[i * out + j];
      next[j] = (linear_output && l + 1 == layers()) ? s : std::tanh(s);
    }
    h = std::move(next);
  }
  return h;
}

Eigen::MatrixXd Mlp::eval_batch(const Eigen::MatrixXd& input) const {
  if (static_cast<std::size_t>(input.cols()) != input_size()) {
    throw ShapeError("mlp batch input has " + std::to_string(input.cols()) +
                     " columns, expected " + std::to_string(input_size()));
  }
  using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  Eigen::Map<const Eigen::RowVectorXd> scale(input_scale.data(),
                                             static_cast<Eigen::Index>(input_size()));
  Eigen::MatrixXd h = input.array().rowwise() * scale.array();
  for (std::size_t l = 0; l < layers(); ++l) {
    const auto in = static_cast<Eigen::Index>(sizes[l]);
    const auto out = static_cast<Eigen::Index>(sizes[l + 1]);
    Eigen::Map<const RowMat> w(params[2 * l].data(), in, out);
    Eigen::Map<const Eigen::RowVectorXd> b(params[2 * l + 1].data(), out);
    Eigen::MatrixXd next = h * w;
    next.rowwise() += b;
    if (!(linear_output && l + 1 == layers())) next = next.array().tanh().matrix();
    h = std::move(next);
  }
  return h;
}

Mlp glorot_mlp(const Key& key, std::vector<std::size_t> sizes,
               bool linear_output, ad::Tensor input_scale) {
  if (sizes.size() < 2) throw ConfigError("mlp needs at least one layer");
  if (input_scale.size() != sizes.front()) {
    throw ShapeError("input scale length does not match input size");
  }
  Mlp net;
  net.sizes = std::move(sizes);
  net.linear_output = linear_output;
  net.input_scale = std::move(input_scale);
  for (std::size_t l = 0; l + 1 < net.sizes.size(); ++l) {
    const std::size_t in = net.sizes[l], out = net.sizes[l + 1];
    const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
    Stream rng(key.split("W" + std::to_string(l)));
    ad::Tensor w(ad::Shape{in, out});
    for (double& v : w.values()) v = rng.uniform(-limit, limit);
    net.params.push_back(std::move(w));
    net.params.emplace_back(ad::Shape{out}, 0.0);
  }
  return net;
}

ad::Tensor state_input_scale(bool enabled) {
  if (!enabled) return ad::Tensor(ad::Shape{6}, 1.0);
  const double pi = std::numbers::pi;
  return ad::Tensor::vector({0.1, 0.1, 1.0 / pi, 0.2, 0.2, 0.2});
}

ad::Var forward(std::span<const ad::Var> params, const Mlp& shape_of,
                ad::Var input_scale, ad::Var x) {
  if (params.size() != 2 * shape_of.layers()) {
    throw ShapeError("mlp forward: wrong number of parameter handles");
  }
  ad::Var h = ad::mul(x, input_scale);
  for (std::size_t l = 0; l < shape_of.layers(); ++l) {
    h = ad::add(ad::matmul(h, params[2 * l]), params[2 * l + 1]);
    if (!(shape_of.linear_output && l + 1 == shape_of.layers())) h = ad::tanh(h);
  }
  return h;
}

double squared_norm(std::span<const ad::Tensor> params) {
  double s = 0.0;
  for (const ad::Tensor& p : params)
    for (double v : p.values()) s += v * v;
  return s;
}

}  // namespace coml::nn
