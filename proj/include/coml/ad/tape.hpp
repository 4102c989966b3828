#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string_view>
#include <vector>

#include "coml/ad/tensor.hpp"

namespace coml::ad {

// Primitive operations understood by the tape.
enum class Op : std::uint8_t {
  kLeaf,
  kAdd,
  kSub,
  kMul,
  kDiv,
  kNeg,
  kScale,
  kAddScalar,
  kSquare,
  kPow,
  kAbs,
  kTanh,
  kExp,
  kLog,
  kSin,
  kCos,
  kSum,
  kSumRows,
  kReshape,
  kSlice,
  kConcat,
  kMatMul,
  kTranspose,
  kSolve,
  kGather,
  kBatchMatVec,
  kBatchOuter,
  kRotate,
};

std::string_view op_name(Op op);

// Non-tensor arguments of a primitive.
struct Attr {
  double scalar = 0.0;
  std::size_t a = 0;
  std::size_t b = 0;
  Shape shape;                         // reshape / gather target
  std::vector<std::int64_t> index;     // gather map, -1 yields zero
};

class Tape;

// Handle to a value recorded on a tape. Cheap to copy; only valid while the
// tape is alive and has not been cleared.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::uint32_t id) : tape_(tape), id_(id) {}

  Tape* tape() const { return tape_; }
  std::uint32_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }

 private:
  Tape* tape_ = nullptr;
  std::uint32_t id_ = 0;
};

// Wengert list of primitive applications. Nodes are appended in evaluation
// order, so every node's arguments precede it.
//
// A tape is single-threaded. Independent tapes may be used concurrently.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Differentiable leaf. Inputs are numbered in registration order.
  Var input(Tensor value);
  // Leaf excluded from differentiation.
  Var constant(Tensor value);
  Var constant(double value) { return constant(Tensor::scalar(value)); }

  Var apply(Op op, std::span<const Var> args, Attr attr = {});
  // Name-based construction; throws UnsupportedPrimitive for unknown names.
  Var apply(std::string_view primitive, std::span<const Var> args,
            Attr attr = {});

  const Tensor& value(Var v) const { return nodes_[v.id()].value; }
  bool requires_grad(Var v) const { return nodes_[v.id()].requires_grad; }
  Op op(std::size_t node) const { return nodes_[node].op; }
  std::size_t size() const { return nodes_.size(); }
  const std::vector<Var>& inputs() const { return inputs_; }

  // Vector-Jacobian product of `output` seeded with `seed`, one cotangent per
  // registered input.
  std::vector<Tensor> gradient(Var output, const Tensor& seed) const;
  std::vector<Tensor> gradient(Var output, const Tensor& seed,
                               std::span<const Var> wrt) const;
  // Gradient of a scalar output (seed 1).
  std::vector<Tensor> gradient(Var output) const;

  // Re-evaluates every node from the given input values (constants keep
  // their recorded values) and returns the values of `outputs`.
  std::vector<Tensor> replay(std::span<const Tensor> input_values,
                             std::span<const Var> outputs) const;

  void clear();

 private:
  struct Node {
    Op op = Op::kLeaf;
    bool requires_grad = false;
    std::uint32_t arg_begin = 0;
    std::uint32_t arg_count = 0;
    double scalar = 0.0;
    std::size_t a = 0;
    std::size_t b = 0;
    std::int32_t aux = -1;  // index into index_maps_
    Tensor value;
  };

  Var push_leaf(Tensor value, bool differentiable);

  std::vector<Node> nodes_;
  std::vector<std::uint32_t> args_;
  std::vector<std::vector<std::int64_t>> index_maps_;
  std::vector<Var> inputs_;

  friend struct TapeKernels;
};

// Result of `record`: the tape owns every recorded value.
struct Recording {
  std::unique_ptr<Tape> tape;
  std::vector<Var> inputs;
  std::vector<Var> outputs;
  std::vector<Tensor> values;  // output values
};

// Evaluates `f(tape, inputs)` while recording it.
Recording record(
    const std::function<std::vector<Var>(Tape&, std::span<const Var>)>& f,
    std::vector<Tensor> inputs);

// ---------------------------------------------------------------------------
// Primitive constructors. Binary elementwise ops broadcast a scalar, a row
// vector matching the last axis, or a column of shape [rows, 1].

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var div(Var a, Var b);
Var neg(Var a);
Var scale(Var a, double c);
Var add_scalar(Var a, double c);
Var square(Var a);
Var pow(Var a, double p);
Var abs(Var a);
Var tanh(Var a);
Var exp(Var a);
Var log(Var a);
Var sin(Var a);
Var cos(Var a);
Var sum(Var a);       // all entries -> scalar
Var sum_rows(Var a);  // reduce last axis, keepdim
Var reshape(Var a, Shape s);
Var slice(Var a, std::size_t begin, std::size_t end);  // last axis
Var concat(std::span<const Var> parts);                // last axis
inline Var concat(std::initializer_list<Var> parts) {
  return concat(std::span<const Var>(parts.begin(), parts.size()));
}
Var matmul(Var a, Var b);  // [m,k] x [k,n]
Var transpose(Var a);      // 2-D
Var solve(Var a, Var b);   // a^{-1} b, a square
Var gather(Var a, std::vector<std::int64_t> index, Shape out);
// m [B, r*c] viewed as B row-major r x c matrices times v [B, c] -> [B, r].
Var batch_matvec(Var m, Var v);
// a [B, r], b [B, c] -> [B, r*c] row-major outer products.
Var batch_outer(Var a, Var b);
// Planar rotation of the first two columns of v [B, n>=2] by angles [B, 1];
// `transpose` applies R(phi)^T instead of R(phi).
Var rotate(Var angle, Var v, bool transpose);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }
inline Var operator/(Var a, Var b) { return div(a, b); }
inline Var operator-(Var a) { return neg(a); }
inline Var operator*(Var a, double c) { return scale(a, c); }
inline Var operator*(double c, Var a) { return scale(a, c); }
inline Var operator+(Var a, double c) { return add_scalar(a, c); }
inline Var operator-(Var a, double c) { return add_scalar(a, -c); }

}  // namespace coml::ad
