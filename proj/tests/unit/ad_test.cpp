#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <string>

#include "coml/ad/adam.hpp"
#include "coml/ad/tape.hpp"
#include "coml/errors.hpp"
#include "coml/random.hpp"

namespace coml::ad {
namespace {

using Fn = std::function<Var(Tape&, std::span<const Var>)>;

Tensor random_tensor(Shape s, Stream& rng, double lo = -2.0, double hi = 2.0) {
  Tensor t(s);
  for (double& v : t.values()) v = rng.uniform(lo, hi);
  return t;
}

double dot(const Tensor& a, const Tensor& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

// Relative error between the reverse-mode VJP and central differences of
// <w, f(x)>, over all inputs stacked into one vector.
double gradient_error(const Fn& f, const std::vector<Tensor>& x, std::uint64_t seed) {
  Stream rng(Key::from_seed(seed).split("seed-vector"));
  Tape tape;
  std::vector<Var> in;
  for (const Tensor& xi : x) in.push_back(tape.input(xi));
  const Var out = f(tape, in);
  const Tensor w = random_tensor(out.shape(), rng, -1.0, 1.0);
  const std::vector<Tensor> g = tape.gradient(out, w);

  auto objective = [&](const std::vector<Tensor>& xs) {
    Tape t;
    std::vector<Var> v;
    for (const Tensor& xi : xs) v.push_back(t.input(xi));
    return dot(w, f(t, v).value());
  };
  const double h = 1e-5;
  double num = 0.0, den = 0.0;
  std::vector<Tensor> xs = x;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    for (std::size_t j = 0; j < xs[i].size(); ++j) {
      const double keep = xs[i][j];
      xs[i][j] = keep + h;
      const double fp = objective(xs);
      xs[i][j] = keep - h;
      const double fm = objective(xs);
      xs[i][j] = keep;
      const double fd = (fp - fm) / (2.0 * h);
      num += (g[i][j] - fd) * (g[i][j] - fd);
      den += fd * fd;
    }
  }
  return std::sqrt(num) / std::max(std::sqrt(den), 1e-12);
}

struct Case {
  std::string name;
  Fn f;
  std::vector<Shape> shapes;
  double lo = -2.0;
  double hi = 2.0;
};

std::vector<Case> primitive_cases() {
  return {
      {"add", [](Tape&, auto v) { return add(v[0], v[1]); }, {{3, 4}, {3, 4}}},
      {"add_row", [](Tape&, auto v) { return add(v[0], v[1]); }, {{3, 4}, {4}}},
      {"add_col", [](Tape&, auto v) { return add(v[0], v[1]); }, {{3, 4}, {3, 1}}},
      {"add_scalar_tensor", [](Tape&, auto v) { return add(v[0], v[1]); }, {{3, 4}, {}}},
      {"sub", [](Tape&, auto v) { return sub(v[0], v[1]); }, {{3, 4}, {4}}},
      {"mul", [](Tape&, auto v) { return mul(v[0], v[1]); }, {{3, 4}, {3, 1}}},
      {"div",
       [](Tape&, auto v) { return div(v[0], add_scalar(square(v[1]), 0.5)); },
       {{3, 4}, {3, 4}}},
      {"neg", [](Tape&, auto v) { return neg(v[0]); }, {{2, 5}}},
      {"scale", [](Tape&, auto v) { return scale(v[0], -1.7); }, {{2, 5}}},
      {"add_scalar", [](Tape&, auto v) { return add_scalar(v[0], 0.3); }, {{2, 5}}},
      {"square", [](Tape&, auto v) { return square(v[0]); }, {{2, 5}}},
      {"pow", [](Tape&, auto v) { return pow(v[0], 2.5); }, {{2, 5}}, 0.2, 2.0},
      {"abs", [](Tape&, auto v) { return abs(v[0]); }, {{2, 5}}, 0.1, 2.0},
      {"abs_negative", [](Tape&, auto v) { return abs(v[0]); }, {{2, 5}}, -2.0, -0.1},
      {"tanh", [](Tape&, auto v) { return tanh(v[0]); }, {{2, 5}}},
      {"exp", [](Tape&, auto v) { return exp(v[0]); }, {{2, 5}}},
      {"log", [](Tape&, auto v) { return log(v[0]); }, {{2, 5}}, 0.2, 2.0},
      {"sin", [](Tape&, auto v) { return sin(v[0]); }, {{2, 5}}},
      {"cos", [](Tape&, auto v) { return cos(v[0]); }, {{2, 5}}},
      {"sum", [](Tape&, auto v) { return sum(v[0]); }, {{3, 4}}},
      {"sum_rows", [](Tape&, auto v) { return sum_rows(v[0]); }, {{3, 4}}},
      {"reshape", [](Tape&, auto v) { return square(reshape(v[0], Shape{4, 3})); }, {{3, 4}}},
      {"slice", [](Tape&, auto v) { return slice(v[0], 1, 3); }, {{3, 4}}},
      {"concat", [](Tape&, auto v) { return concat({v[0], square(v[1])}); }, {{3, 2}, {3, 3}}},
      {"matmul", [](Tape&, auto v) { return matmul(v[0], v[1]); }, {{3, 4}, {4, 2}}},
      {"transpose", [](Tape&, auto v) { return square(transpose(v[0])); }, {{3, 4}}},
      {"solve",
       [](Tape& t, auto v) {
         Tensor eye(Shape{3, 3});
         for (int i = 0; i < 3; ++i) eye.at(i, i) = 5.0;
         return solve(add(v[0], t.constant(eye)), v[1]);
       },
       {{3, 3}, {3, 2}}},
      {"gather",
       [](Tape&, auto v) { return gather(v[0], {0, -1, 2, 2, 5, 1}, Shape{2, 3}); },
       {{6}}},
      {"batch_matvec", [](Tape&, auto v) { return batch_matvec(v[0], v[1]); }, {{4, 6}, {4, 3}}},
      {"batch_outer", [](Tape&, auto v) { return batch_outer(v[0], v[1]); }, {{4, 2}, {4, 3}}},
      {"rotate", [](Tape&, auto v) { return rotate(v[0], v[1], false); }, {{4, 1}, {4, 3}}},
      {"rotate_transpose", [](Tape&, auto v) { return rotate(v[0], v[1], true); }, {{4, 1}, {4, 3}}},
  };
}

class PrimitiveGradient : public ::testing::TestWithParam<std::size_t> {};

TEST_P(PrimitiveGradient, MatchesCentralDifferences) {
  const Case c = primitive_cases()[GetParam()];
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    Stream rng(Key::from_seed(seed).split(c.name));
    std::vector<Tensor> x;
    for (const Shape& s : c.shapes) x.push_back(random_tensor(s, rng, c.lo, c.hi));
    EXPECT_LT(gradient_error(c.f, x, seed), 1e-6) << c.name << " seed " << seed;
  }
}

INSTANTIATE_TEST_SUITE_P(All, PrimitiveGradient,
                         ::testing::Range<std::size_t>(0, primitive_cases().size()),
                         [](const auto& info) { return primitive_cases()[info.param].name; });

TEST(Tape, IdentityIsOneNode) {
  Tape t;
  const Var x = t.input(Tensor::vector({2.0}));
  EXPECT_EQ(t.size(), 1u);
  EXPECT_EQ(x.value()[0], 2.0);
}

TEST(Tape, SumOfSquares) {
  Tape t;
  const Var x = t.input(Tensor::vector({1.0, 2.0, 3.0}));
  const Var y = sum(mul(x, x));
  EXPECT_EQ(y.value().item(), 14.0);
  const std::vector<Tensor> g = t.gradient(y);
  EXPECT_EQ(g[0], Tensor::vector({2.0, 4.0, 6.0}));
}

TEST(Tape, TanhSlopeAtZero) {
  Tape t;
  const Var x = t.input(Tensor::vector({0.0}));
  const std::vector<Tensor> g = t.gradient(tanh(x), Tensor::vector({1.0}));
  EXPECT_EQ(g[0][0], 1.0);
}

TEST(Tape, IdentitySolve) {
  Tape t;
  const Var a = t.input(Tensor::matrix(2, 2, {1, 0, 0, 1}));
  const Var b = t.input(Tensor::vector({3.0, 4.0}));
  const Var x = solve(a, reshape(b, Shape{2, 1}));
  EXPECT_DOUBLE_EQ(x.value()[0], 3.0);
  EXPECT_DOUBLE_EQ(x.value()[1], 4.0);
}

TEST(Tape, NameBasedApply) {
  Tape t;
  const Var x = t.input(Tensor::vector({0.5, -1.0}));
  const Var args[] = {x};
  const Var y = t.apply("tanh", args);
  EXPECT_EQ(y.value()[0], std::tanh(0.5));
  EXPECT_THROW(t.apply("frobnicate", args), UnsupportedPrimitive);
}

TEST(Tape, ShapeMismatchThrows) {
  Tape t;
  const Var a = t.input(Tensor(Shape{2, 3}));
  const Var b = t.input(Tensor(Shape{2, 2}));
  EXPECT_THROW(add(a, b), ShapeError);
  EXPECT_THROW(matmul(a, a), ShapeError);
}

TEST(Tape, SingleRowKeepsMatrixShape) {
  Tape t;
  const Var x = t.input(Tensor::matrix(1, 3, {1.0, 2.0, 3.0}));
  const Var s = t.input(Tensor::vector({2.0, 2.0, 2.0}));
  for (const Var y : {mul(x, s), mul(s, x), add(s, x)}) {
    ASSERT_EQ(y.value().shape().rank(), 2u);
    EXPECT_EQ(y.value().shape()[0], 1u);
    EXPECT_EQ(y.value().shape()[1], 3u);
  }
}

TEST(Tape, NonFiniteForwardThrows) {
  Tape t;
  const Var x = t.input(Tensor::vector({-1.0}));
  EXPECT_THROW(log(x), NonFiniteError);
}

TEST(Tape, ReplayIsBitExact) {
  Stream rng(Key::from_seed(11));
  const std::vector<Tensor> x0{random_tensor(Shape{4, 3}, rng), random_tensor(Shape{3, 3}, rng)};
  const auto f = [](Tape&, std::span<const Var> v) -> std::vector<Var> {
    const Var h = tanh(matmul(v[0], v[1]));
    return {sum(square(h)), exp(scale(h, 0.1))};
  };
  Recording rec = record(f, x0);
  const std::vector<Tensor> same = rec.tape->replay(x0, rec.outputs);
  for (std::size_t i = 0; i < same.size(); ++i) EXPECT_TRUE(bit_equal(same[i], rec.values[i]));

  const std::vector<Tensor> x1{random_tensor(Shape{4, 3}, rng), random_tensor(Shape{3, 3}, rng)};
  const std::vector<Tensor> replayed = rec.tape->replay(x1, rec.outputs);
  Recording fresh = record(f, x1);
  for (std::size_t i = 0; i < replayed.size(); ++i) EXPECT_TRUE(bit_equal(replayed[i], fresh.values[i]));
}

TEST(Tape, GradientOfIndependentSumIsConcatenation) {
  Stream rng(Key::from_seed(12));
  const Tensor a = random_tensor(Shape{3}, rng), b = random_tensor(Shape{2, 2}, rng);
  Tape t;
  const Var x = t.input(a), y = t.input(b);
  const Var fx = sum(sin(x)), gy = sum(exp(y));
  const std::vector<Tensor> joint = t.gradient(add(fx, gy));

  Tape t1;
  const Var x1 = t1.input(a);
  const Tensor g1 = t1.gradient(sum(sin(x1)))[0];
  Tape t2;
  const Var y2 = t2.input(b);
  const Tensor g2 = t2.gradient(sum(exp(y2)))[0];
  EXPECT_TRUE(bit_equal(joint[0], g1));
  EXPECT_TRUE(bit_equal(joint[1], g2));
}

TEST(Tape, GradientWithRespectToSubset) {
  Tape t;
  const Var x = t.input(Tensor::vector({1.0, 2.0}));
  const Var y = t.input(Tensor::vector({3.0}));
  const Var z = sum(mul(x, y));
  const Var wrt[] = {y};
  const std::vector<Tensor> g = t.gradient(z, Tensor::scalar(1.0), wrt);
  ASSERT_EQ(g.size(), 1u);
  EXPECT_EQ(g[0][0], 3.0);
}

TEST(Adam, ZeroGradientLeavesParams) {
  std::vector<Tensor> p{Tensor::vector({1.0, -2.0})};
  AdamState st = AdamState::zeros_like(p);
  st.m[0] = Tensor::vector({0.5, 0.5});
  st.v[0] = Tensor::vector({0.25, 0.25});
  const std::vector<Tensor> g{Tensor::vector({0.0, 0.0})};
  const std::vector<Tensor> before = p;
  adam_step(p, g, st, 10, {});
  // With m != 0 the parameters still move; with m = 0 they must not.
  std::vector<Tensor> q{Tensor::vector({1.0, -2.0})};
  AdamState zero = AdamState::zeros_like(q);
  adam_step(q, g, zero, 1, {});
  EXPECT_EQ(q[0], before[0]);
  EXPECT_DOUBLE_EQ(st.m[0][0], 0.45);
  EXPECT_DOUBLE_EQ(st.v[0][0], 0.25 * 0.999);
}

TEST(Adam, FirstStepOnUnitGradient) {
  AdamConfig cfg;
  cfg.step_size = 0.01;
  std::vector<Tensor> p{Tensor::scalar(0.0)};
  AdamState st = AdamState::zeros_like(p);
  adam_step(p, {Tensor::scalar(1.0)}, st, 1, cfg);
  EXPECT_NEAR(p[0].item(), -0.01 / (1.0 + 1e-8), 1e-18);
}

TEST(Adam, MatchesScriptedRecurrence) {
  AdamConfig cfg;
  cfg.step_size = 0.05;
  const std::vector<double> grads{0.3, -1.2};
  std::vector<Tensor> p{Tensor::vector({1.0, 1.0})};
  AdamState st = AdamState::zeros_like(p);
  double m[2] = {0, 0}, v[2] = {0, 0}, x[2] = {1.0, 1.0};
  for (std::size_t t = 1; t <= 2; ++t) {
    adam_step(p, {Tensor::vector(grads)}, st, t, cfg);
    for (int i = 0; i < 2; ++i) {
      m[i] = 0.9 * m[i] + 0.1 * grads[i];
      v[i] = 0.999 * v[i] + 0.001 * grads[i] * grads[i];
      const double mh = m[i] / (1.0 - std::pow(0.9, t));
      const double vh = v[i] / (1.0 - std::pow(0.999, t));
      x[i] -= 0.05 * mh / (std::sqrt(vh) + 1e-8);
    }
  }
  EXPECT_NEAR(p[0][0], x[0], 1e-15);
  EXPECT_NEAR(p[0][1], x[1], 1e-15);
}

}  // namespace
}  // namespace coml::ad
