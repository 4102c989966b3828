#include "coml/ad/tape.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <string>
#include <unordered_map>

#include "coml/errors.hpp"

namespace coml::ad {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic,
                             Eigen::RowMajor>;
using MapC = Eigen::Map<const RowMat>;
using Map = Eigen::Map<RowMat>;

enum class Bcast : std::uint8_t { kFull, kScalar, kRow, kCol };

struct BinaryPlan {
  Bcast ma = Bcast::kFull;
  Bcast mb = Bcast::kFull;
  Shape out;
  std::size_t cols = 1;
};

inline std::size_t bidx(Bcast m, std::size_t i, std::size_t cols) {
  switch (m) {
    case Bcast::kFull: return i;
    case Bcast::kScalar: return 0;
    case Bcast::kRow: return i % cols;
    case Bcast::kCol: return i / cols;
  }
  return i;
}

BinaryPlan plan_binary(const Shape& a, const Shape& b, Op op) {
  BinaryPlan p;
  if (a == b) {
    p.out = a;
    p.cols = a.last();
    return p;
  }
  const std::size_t na = a.numel(), nb = b.numel();
  if (nb == 1 && na >= 1) {
    p.out = a;
    p.cols = a.last();
    p.mb = Bcast::kScalar;
    return p;
  }
  if (na == 1) {
    p.out = b;
    p.cols = b.last();
    p.ma = Bcast::kScalar;
    return p;
  }
  // Equal sizes ([1, n] with [n]): keep the higher-rank shape.
  const bool a_big = na > nb || (na == nb && a.rank() >= b.rank());
  const Shape& big = a_big ? a : b;
  const Shape& small = a_big ? b : a;
  const std::size_t cols = big.last();
  const std::size_t rows = cols ? big.numel() / cols : 0;
  Bcast m;
  if (small.numel() == cols && small.last() == cols) {
    m = Bcast::kRow;
  } else if (small.last() == 1 && small.numel() == rows) {
    m = Bcast::kCol;
  } else {
    throw ShapeError(std::string(op_name(op)) + ": cannot broadcast " +
                     a.str() + " with " + b.str());
  }
  p.out = big;
  p.cols = cols;
  (a_big ? p.mb : p.ma) = m;
  return p;
}

std::size_t rows_of(const Shape& s) {
  const std::size_t c = s.last();
  return c ? s.numel() / c : 0;
}

void require_2d(const Tensor& t, Op op) {
  if (t.shape().rank() != 2) {
    throw ShapeError(std::string(op_name(op)) + " expects a 2-D operand, got " +
                     t.shape().str());
  }
}

struct Args {
  double scalar;
  std::size_t a;
  std::size_t b;
  const Shape* shape;
  const std::vector<std::int64_t>* index;
};

template <class F>
Tensor unary(const Tensor& x, F f) {
  Tensor out(x.shape());
  const double* px = x.data();
  double* po = out.data();
  for (std::size_t i = 0, n = x.size(); i < n; ++i) po[i] = f(px[i]);
  return out;
}

template <class F>
Tensor binary(const Tensor& a, const Tensor& b, Op op, F f) {
  const BinaryPlan p = plan_binary(a.shape(), b.shape(), op);
  Tensor out(p.out);
  const double* pa = a.data();
  const double* pb = b.data();
  double* po = out.data();
  const std::size_t n = out.size();
  if (p.ma == Bcast::kFull && p.mb == Bcast::kFull) {
    for (std::size_t i = 0; i < n; ++i) po[i] = f(pa[i], pb[i]);
  } else {
    for (std::size_t i = 0; i < n; ++i)
      po[i] = f(pa[bidx(p.ma, i, p.cols)], pb[bidx(p.mb, i, p.cols)]);
  }
  return out;
}

Tensor compute(Op op, std::span<const Tensor* const> in, const Args& args) {
  switch (op) {
    case Op::kLeaf:
      throw Error("compute() called on a leaf");
    case Op::kAdd:
      return binary(*in[0], *in[1], op, [](double x, double y) { return x + y; });
    case Op::kSub:
      return binary(*in[0], *in[1], op, [](double x, double y) { return x - y; });
    case Op::kMul:
      return binary(*in[0], *in[1], op, [](double x, double y) { return x * y; });
    case Op::kDiv:
      return binary(*in[0], *in[1], op, [](double x, double y) { return x / y; });
    case Op::kNeg:
      return unary(*in[0], [](double x) { return -x; });
    case Op::kScale: {
      const double c = args.scalar;
      return unary(*in[0], [c](double x) { return c * x; });
    }
    case Op::kAddScalar: {
      const double c = args.scalar;
      return unary(*in[0], [c](double x) { return x + c; });
    }
    case Op::kSquare:
      return unary(*in[0], [](double x) { return x * x; });
    case Op::kPow: {
      const double p = args.scalar;
      return unary(*in[0], [p](double x) { return std::pow(x, p); });
    }
    case Op::kAbs:
      return unary(*in[0], [](double x) { return std::abs(x); });
    case Op::kTanh:
      return unary(*in[0], [](double x) { return std::tanh(x); });
    case Op::kExp:
      return unary(*in[0], [](double x) { return std::exp(x); });
    case Op::kLog:
      return unary(*in[0], [](double x) { return std::log(x); });
    case Op::kSin:
      return unary(*in[0], [](double x) { return std::sin(x); });
    case Op::kCos:
      return unary(*in[0], [](double x) { return std::cos(x); });
    case Op::kSum: {
      double s = 0.0;
      for (double v : in[0]->values()) s += v;
      return Tensor::scalar(s);
    }
    case Op::kSumRows: {
      const Tensor& x = *in[0];
      const std::size_t c = x.cols(), r = x.rows();
      Tensor out(x.shape().with_last(1));
      for (std::size_t i = 0; i < r; ++i) {
        double s = 0.0;
        const double* row = x.data() + i * c;
        for (std::size_t j = 0; j < c; ++j) s += row[j];
        out[i] = s;
      }
      return out;
    }
    case Op::kReshape:
      return in[0]->reshaped(*args.shape);
    case Op::kSlice: {
      const Tensor& x = *in[0];
      const std::size_t c = x.cols(), r = x.rows();
      const std::size_t b = args.a, e = args.b;
      if (b > e || e > c) {
        throw ShapeError("slice [" + std::to_string(b) + ", " +
                         std::to_string(e) + ") out of range for " +
                         x.shape().str());
      }
      const std::size_t w = e - b;
      Tensor out(x.shape().with_last(w));
      for (std::size_t i = 0; i < r; ++i)
        std::copy_n(x.data() + i * c + b, w, out.data() + i * w);
      return out;
    }
    case Op::kConcat: {
      const std::size_t r = in[0]->rows();
      std::size_t total = 0;
      for (const Tensor* t : in) {
        if (t->rows() != r) {
          throw ShapeError("concat: mismatched leading dims " +
                           in[0]->shape().str() + " vs " + t->shape().str());
        }
        total += t->cols();
      }
      Tensor out(in[0]->shape().with_last(total));
      for (std::size_t i = 0; i < r; ++i) {
        std::size_t off = 0;
        for (const Tensor* t : in) {
          const std::size_t c = t->cols();
          std::copy_n(t->data() + i * c, c, out.data() + i * total + off);
          off += c;
        }
      }
      return out;
    }
    case Op::kMatMul: {
      const Tensor& a = *in[0];
      const Tensor& b = *in[1];
      require_2d(a, op);
      require_2d(b, op);
      if (a.shape()[1] != b.shape()[0]) {
        throw ShapeError("matmul: " + a.shape().str() + " x " + b.shape().str());
      }
      const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
      Tensor out(Shape{m, n});
      Map(out.data(), m, n).noalias() =
          MapC(a.data(), m, k) * MapC(b.data(), k, n);
      return out;
    }
    case Op::kTranspose: {
      const Tensor& a = *in[0];
      require_2d(a, op);
      const std::size_t m = a.shape()[0], n = a.shape()[1];
      Tensor out(Shape{n, m});
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out[j * m + i] = a[i * n + j];
      return out;
    }
    case Op::kSolve: {
      const Tensor& a = *in[0];
      const Tensor& b = *in[1];
      require_2d(a, op);
      const std::size_t n = a.shape()[0];
      if (a.shape()[1] != n || rows_of(b.shape()) * b.cols() != b.size() ||
          (b.shape().rank() == 1 ? b.size() != n : b.shape()[0] != n)) {
        throw ShapeError("solve: " + a.shape().str() + " \\ " + b.shape().str());
      }
      const std::size_t k = b.shape().rank() == 1 ? 1 : b.shape()[1];
      Eigen::PartialPivLU<Eigen::MatrixXd> lu(MapC(a.data(), n, n));
      Tensor out(b.shape());
      Map(out.data(), n, k).noalias() = lu.solve(MapC(b.data(), n, k));
      return out;
    }
    case Op::kGather: {
      const Tensor& x = *in[0];
      const auto& idx = *args.index;
      Tensor out(*args.shape);
      if (idx.size() != out.size()) {
        throw ShapeError("gather: index map length does not match " +
                         args.shape->str());
      }
      for (std::size_t i = 0; i < idx.size(); ++i) {
        if (idx[i] >= 0) {
          if (static_cast<std::size_t>(idx[i]) >= x.size()) {
            throw ShapeError("gather: index out of range");
          }
          out[i] = x[static_cast<std::size_t>(idx[i])];
        }
      }
      return out;
    }
    case Op::kBatchMatVec: {
      const Tensor& m = *in[0];
      const Tensor& v = *in[1];
      const std::size_t batch = v.rows(), c = v.cols();
      if (m.rows() != batch || c == 0 || m.cols() % c != 0) {
        throw ShapeError("batch_matvec: " + m.shape().str() + " with " +
                         v.shape().str());
      }
      const std::size_t r = m.cols() / c;
      Tensor out(v.shape().with_last(r));
      for (std::size_t bi = 0; bi < batch; ++bi) {
        const double* mb = m.data() + bi * r * c;
        const double* vb = v.data() + bi * c;
        double* ob = out.data() + bi * r;
        for (std::size_t i = 0; i < r; ++i) {
          double s = 0.0;
          for (std::size_t j = 0; j < c; ++j) s += mb[i * c + j] * vb[j];
          ob[i] = s;
        }
      }
      return out;
    }
    case Op::kBatchOuter: {
      const Tensor& a = *in[0];
      const Tensor& b = *in[1];
      const std::size_t batch = a.rows(), r = a.cols(), c = b.cols();
      if (b.rows() != batch) {
        throw ShapeError("batch_outer: " + a.shape().str() + " with " +
                         b.shape().str());
      }
      Tensor out(a.shape().with_last(r * c));
      for (std::size_t bi = 0; bi < batch; ++bi) {
        const double* ab = a.data() + bi * r;
        const double* bb = b.data() + bi * c;
        double* ob = out.data() + bi * r * c;
        for (std::size_t i = 0; i < r; ++i)
          for (std::size_t j = 0; j < c; ++j) ob[i * c + j] = ab[i] * bb[j];
      }
      return out;
    }
    case Op::kRotate: {
      const Tensor& ang = *in[0];
      const Tensor& v = *in[1];
      const std::size_t batch = v.rows(), n = v.cols();
      if (ang.size() != batch || n < 2) {
        throw ShapeError("rotate: angles " + ang.shape().str() + " with " +
                         v.shape().str());
      }
      const double sg = args.a ? -1.0 : 1.0;
      Tensor out = v;
      for (std::size_t bi = 0; bi < batch; ++bi) {
        const double c = std::cos(ang[bi]), s = std::sin(ang[bi]);
        const double v1 = v[bi * n], v2 = v[bi * n + 1];
        out[bi * n] = c * v1 - sg * s * v2;
        out[bi * n + 1] = sg * s * v1 + c * v2;
      }
      return out;
    }
  }
  throw UnsupportedPrimitive(std::string(op_name(op)));
}

// Accumulates cotangents of the arguments given the output cotangent `g`.
// `gin[k]` is null when argument k does not need a gradient.
void vjp(Op op, const Tensor& g, std::span<const Tensor* const> in,
         const Tensor& out, const Args& args, std::span<Tensor* const> gin) {
  auto unary_vjp = [&](auto dfdx) {
    if (!gin[0]) return;
    const double* px = in[0]->data();
    const double* po = out.data();
    const double* pg = g.data();
    double* pr = gin[0]->data();
    for (std::size_t i = 0, n = g.size(); i < n; ++i)
      pr[i] += pg[i] * dfdx(px[i], po[i]);
  };
  auto binary_vjp = [&](auto dfa, auto dfb) {
    const BinaryPlan p = plan_binary(in[0]->shape(), in[1]->shape(), op);
    const double* pa = in[0]->data();
    const double* pb = in[1]->data();
    const double* pg = g.data();
    for (std::size_t i = 0, n = g.size(); i < n; ++i) {
      const std::size_t ia = bidx(p.ma, i, p.cols);
      const std::size_t ib = bidx(p.mb, i, p.cols);
      if (gin[0]) (*gin[0])[ia] += pg[i] * dfa(pa[ia], pb[ib]);
      if (gin[1]) (*gin[1])[ib] += pg[i] * dfb(pa[ia], pb[ib]);
    }
  };

  switch (op) {
    case Op::kLeaf:
      return;
    case Op::kAdd:
      binary_vjp([](double, double) { return 1.0; },
                 [](double, double) { return 1.0; });
      return;
    case Op::kSub:
      binary_vjp([](double, double) { return 1.0; },
                 [](double, double) { return -1.0; });
      return;
    case Op::kMul:
      binary_vjp([](double, double y) { return y; },
                 [](double x, double) { return x; });
      return;
    case Op::kDiv:
      binary_vjp([](double, double y) { return 1.0 / y; },
                 [](double x, double y) { return -x / (y * y); });
      return;
    case Op::kNeg:
      unary_vjp([](double, double) { return -1.0; });
      return;
    case Op::kScale: {
      const double c = args.scalar;
      unary_vjp([c](double, double) { return c; });
      return;
    }
    case Op::kAddScalar:
      unary_vjp([](double, double) { return 1.0; });
      return;
    case Op::kSquare:
      unary_vjp([](double x, double) { return 2.0 * x; });
      return;
    case Op::kPow: {
      const double p = args.scalar;
      unary_vjp([p](double x, double) { return p * std::pow(x, p - 1.0); });
      return;
    }
    case Op::kAbs:
      unary_vjp([](double x, double) {
        return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0);
      });
      return;
    case Op::kTanh:
      unary_vjp([](double, double y) { return 1.0 - y * y; });
      return;
    case Op::kExp:
      unary_vjp([](double, double y) { return y; });
      return;
    case Op::kLog:
      unary_vjp([](double x, double) { return 1.0 / x; });
      return;
    case Op::kSin:
      unary_vjp([](double x, double) { return std::cos(x); });
      return;
    case Op::kCos:
      unary_vjp([](double x, double) { return -std::sin(x); });
      return;
    case Op::kSum: {
      if (!gin[0]) return;
      const double s = g[0];
      for (double& v : gin[0]->values()) v += s;
      return;
    }
    case Op::kSumRows: {
      if (!gin[0]) return;
      const std::size_t c = in[0]->cols(), r = in[0]->rows();
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) (*gin[0])[i * c + j] += g[i];
      return;
    }
    case Op::kReshape: {
      if (!gin[0]) return;
      for (std::size_t i = 0, n = g.size(); i < n; ++i) (*gin[0])[i] += g[i];
      return;
    }
    case Op::kSlice: {
      if (!gin[0]) return;
      const std::size_t c = in[0]->cols(), r = in[0]->rows();
      const std::size_t b = args.a, w = args.b - args.a;
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < w; ++j)
          (*gin[0])[i * c + b + j] += g[i * w + j];
      return;
    }
    case Op::kConcat: {
      const std::size_t r = in[0]->rows();
      const std::size_t total = out.cols();
      std::size_t off = 0;
      for (std::size_t k = 0; k < in.size(); ++k) {
        const std::size_t c = in[k]->cols();
        if (gin[k]) {
          for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j)
              (*gin[k])[i * c + j] += g[i * total + off + j];
        }
        off += c;
      }
      return;
    }
    case Op::kMatMul: {
      const Tensor& a = *in[0];
      const Tensor& b = *in[1];
      const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
      if (gin[0])
        Map(gin[0]->data(), m, k).noalias() +=
            MapC(g.data(), m, n) * MapC(b.data(), k, n).transpose();
      if (gin[1])
        Map(gin[1]->data(), k, n).noalias() +=
            MapC(a.data(), m, k).transpose() * MapC(g.data(), m, n);
      return;
    }
    case Op::kTranspose: {
      if (!gin[0]) return;
      const std::size_t m = in[0]->shape()[0], n = in[0]->shape()[1];
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) (*gin[0])[i * n + j] += g[j * m + i];
      return;
    }
    case Op::kSolve: {
      const Tensor& a = *in[0];
      const std::size_t n = a.shape()[0];
      const std::size_t k = out.size() / n;
      Eigen::PartialPivLU<Eigen::MatrixXd> lut(MapC(a.data(), n, n).transpose());
      const Eigen::MatrixXd gb = lut.solve(MapC(g.data(), n, k));
      if (gin[1]) Map(gin[1]->data(), n, k) += gb;
      if (gin[0])
        Map(gin[0]->data(), n, n).noalias() -=
            gb * MapC(out.data(), n, k).transpose();
      return;
    }
    case Op::kGather: {
      if (!gin[0]) return;
      const auto& idx = *args.index;
      for (std::size_t i = 0; i < idx.size(); ++i)
        if (idx[i] >= 0) (*gin[0])[static_cast<std::size_t>(idx[i])] += g[i];
      return;
    }
    case Op::kBatchMatVec: {
      const Tensor& m = *in[0];
      const Tensor& v = *in[1];
      const std::size_t batch = v.rows(), c = v.cols(), r = m.cols() / c;
      for (std::size_t bi = 0; bi < batch; ++bi) {
        const double* gb = g.data() + bi * r;
        const double* vb = v.data() + bi * c;
        const double* mb = m.data() + bi * r * c;
        if (gin[0]) {
          double* gm = gin[0]->data() + bi * r * c;
          for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j) gm[i * c + j] += gb[i] * vb[j];
        }
        if (gin[1]) {
          double* gv = gin[1]->data() + bi * c;
          for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j) gv[j] += mb[i * c + j] * gb[i];
        }
      }
      return;
    }
    case Op::kBatchOuter: {
      const Tensor& a = *in[0];
      const Tensor& b = *in[1];
      const std::size_t batch = a.rows(), r = a.cols(), c = b.cols();
      for (std::size_t bi = 0; bi < batch; ++bi) {
        const double* gb = g.data() + bi * r * c;
        const double* ab = a.data() + bi * r;
        const double* bb = b.data() + bi * c;
        for (std::size_t i = 0; i < r; ++i) {
          for (std::size_t j = 0; j < c; ++j) {
            if (gin[0]) (*gin[0])[bi * r + i] += gb[i * c + j] * bb[j];
            if (gin[1]) (*gin[1])[bi * c + j] += gb[i * c + j] * ab[i];
          }
        }
      }
      return;
    }
    case Op::kRotate: {
      const Tensor& ang = *in[0];
      const Tensor& v = *in[1];
      const std::size_t batch = v.rows(), n = v.cols();
      const double sg = args.a ? -1.0 : 1.0;
      for (std::size_t bi = 0; bi < batch; ++bi) {
        const double c = std::cos(ang[bi]), s = std::sin(ang[bi]);
        const double v1 = v[bi * n], v2 = v[bi * n + 1];
        const double g1 = g[bi * n], g2 = g[bi * n + 1];
        if (gin[0])
          (*gin[0])[bi] += g1 * (-s * v1 - sg * c * v2) +
                           g2 * (sg * c * v1 - s * v2);
        if (gin[1]) {
          double* gv = gin[1]->data() + bi * n;
          gv[0] += c * g1 + sg * s * g2;
          gv[1] += -sg * s * g1 + c * g2;
          for (std::size_t j = 2; j < n; ++j) gv[j] += g[bi * n + j];
        }
      }
      return;
    }
  }
}

const std::unordered_map<std::string_view, Op>& op_table() {
  static const std::unordered_map<std::string_view, Op> table = [] {
    std::unordered_map<std::string_view, Op> t;
    for (int i = static_cast<int>(Op::kAdd); i <= static_cast<int>(Op::kRotate);
         ++i) {
      const Op op = static_cast<Op>(i);
      t.emplace(op_name(op), op);
    }
    return t;
  }();
  return table;
}

}  // namespace

std::string_view op_name(Op op) {
  switch (op) {
    case Op::kLeaf: return "leaf";
    case Op::kAdd: return "add";
    case Op::kSub: return "sub";
    case Op::kMul: return "mul";
    case Op::kDiv: return "div";
    case Op::kNeg: return "neg";
    case Op::kScale: return "scale";
    case Op::kAddScalar: return "add_scalar";
    case Op::kSquare: return "square";
    case Op::kPow: return "pow";
    case Op::kAbs: return "abs";
    case Op::kTanh: return "tanh";
    case Op::kExp: return "exp";
    case Op::kLog: return "log";
    case Op::kSin: return "sin";
    case Op::kCos: return "cos";
    case Op::kSum: return "sum";
    case Op::kSumRows: return "sum_rows";
    case Op::kReshape: return "reshape";
    case Op::kSlice: return "slice";
    case Op::kConcat: return "concat";
    case Op::kMatMul: return "matmul";
    case Op::kTranspose: return "transpose";
    case Op::kSolve: return "solve";
    case Op::kGather: return "gather";
    case Op::kBatchMatVec: return "batch_matvec";
    case Op::kBatchOuter: return "batch_outer";
    case Op::kRotate: return "rotate";
  }
  return "unknown";
}

const Tensor& Var::value() const { return tape_->value(*this); }

Var Tape::push_leaf(Tensor value, bool differentiable) {
  if (!value.all_finite()) {
    throw NonFiniteError("non-finite leaf value", nodes_.size(), false);
  }
  Node n;
  n.op = Op::kLeaf;
  n.requires_grad = differentiable;
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<std::uint32_t>(nodes_.size() - 1));
}

Var Tape::input(Tensor value) {
  Var v = push_leaf(std::move(value), true);
  inputs_.push_back(v);
  return v;
}

Var Tape::constant(Tensor value) { return push_leaf(std::move(value), false); }

Var Tape::apply(std::string_view primitive, std::span<const Var> args,
                Attr attr) {
  const auto& table = op_table();
  auto it = table.find(primitive);
  if (it == table.end()) throw UnsupportedPrimitive(std::string(primitive));
  return apply(it->second, args, std::move(attr));
}

Var Tape::apply(Op op, std::span<const Var> args, Attr attr) {
  if (op == Op::kLeaf) throw Error("leaves are created with input()/constant()");
  if (args.empty()) throw ShapeError(std::string(op_name(op)) + ": no arguments");
  std::array<const Tensor*, 8> small{};
  std::vector<const Tensor*> large;
  std::span<const Tensor*> in;
  if (args.size() <= small.size()) {
    in = std::span<const Tensor*>(small.data(), args.size());
  } else {
    large.resize(args.size());
    in = large;
  }
  bool rg = false;
  for (std::size_t k = 0; k < args.size(); ++k) {
    if (args[k].tape() != this) {
      throw Error(std::string(op_name(op)) + ": argument from a different tape");
    }
    in[k] = &nodes_[args[k].id()].value;
    rg = rg || nodes_[args[k].id()].requires_grad;
  }
  Args a{attr.scalar, attr.a, attr.b, &attr.shape, &attr.index};
  Tensor value = compute(op, in, a);
  if (!value.all_finite()) {
    throw NonFiniteError(std::string("non-finite value produced by ") +
                             std::string(op_name(op)) + " at node " +
                             std::to_string(nodes_.size()),
                         nodes_.size(), false);
  }
  Node n;
  n.op = op;
  n.requires_grad = rg;
  n.arg_begin = static_cast<std::uint32_t>(args_.size());
  n.arg_count = static_cast<std::uint32_t>(args.size());
  n.scalar = attr.scalar;
  n.a = attr.a;
  n.b = attr.b;
  if (op == Op::kGather) {
    n.aux = static_cast<std::int32_t>(index_maps_.size());
    index_maps_.push_back(std::move(attr.index));
  }
  n.value = std::move(value);
  for (const Var& v : args) args_.push_back(v.id());
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<std::uint32_t>(nodes_.size() - 1));
}

std::vector<Tensor> Tape::gradient(Var output) const {
  return gradient(output, Tensor(value(output).shape(), 1.0));
}

std::vector<Tensor> Tape::gradient(Var output, const Tensor& seed) const {
  return gradient(output, seed, inputs_);
}

std::vector<Tensor> Tape::gradient(Var output, const Tensor& seed,
                                   std::span<const Var> wrt) const {
  const Tensor& out_value = value(output);
  if (!(seed.shape() == out_value.shape()) &&
      !(seed.size() == 1 && out_value.size() == 1)) {
    throw ShapeError("gradient seed " + seed.shape().str() +
                     " does not match output " + out_value.shape().str());
  }
  const std::size_t last = output.id();
  std::vector<Tensor> grads(last + 1);
  std::vector<char> keep(last + 1, 0);
  for (const Var& v : wrt)
    if (v.id() <= last) keep[v.id()] = 1;

  if (nodes_[last].requires_grad) grads[last] = seed.reshaped(out_value.shape());

  std::vector<const Tensor*> in;
  std::vector<Tensor*> gin;
  for (std::size_t i = last + 1; i-- > 0;) {
    const Node& n = nodes_[i];
    if (!n.requires_grad || (grads[i].size() == 0 && n.value.size() != 0)) {
      continue;
    }
    if (!grads[i].all_finite()) {
      throw NonFiniteError("non-finite cotangent at node " + std::to_string(i) +
                               " (" + std::string(op_name(n.op)) + ")",
                           i, true);
    }
    if (n.op == Op::kLeaf) continue;
    in.resize(n.arg_count);
    gin.resize(n.arg_count);
    for (std::size_t k = 0; k < n.arg_count; ++k) {
      const std::uint32_t id = args_[n.arg_begin + k];
      in[k] = &nodes_[id].value;
      if (nodes_[id].requires_grad) {
        if (grads[id].size() == 0 && nodes_[id].value.size() != 0)
          grads[id] = Tensor(nodes_[id].value.shape(), 0.0);
        gin[k] = &grads[id];
      } else {
        gin[k] = nullptr;
      }
    }
    const Args a{n.scalar, n.a, n.b, &n.value.shape(),
                 n.aux >= 0 ? &index_maps_[n.aux] : nullptr};
    // Aliased arguments (x * x) share one accumulator; no VJP reads it.
    vjp(n.op, grads[i], in, n.value, a, gin);
    if (!keep[i]) grads[i] = Tensor();
  }

  std::vector<Tensor> result;
  result.reserve(wrt.size());
  for (const Var& v : wrt) {
    if (v.id() <= last && grads[v.id()].size() == value(v).size() &&
        value(v).size() != 0) {
      result.push_back(grads[v.id()]);
    } else {
      result.emplace_back(value(v).shape(), 0.0);
    }
  }
  return result;
}

std::vector<Tensor> Tape::replay(std::span<const Tensor> input_values,
                                 std::span<const Var> outputs) const {
  if (input_values.size() != inputs_.size()) {
    throw ShapeError("replay: expected " + std::to_string(inputs_.size()) +
                     " inputs, got " + std::to_string(input_values.size()));
  }
  std::vector<Tensor> values(nodes_.size());
  for (std::size_t k = 0; k < inputs_.size(); ++k) {
    if (!(input_values[k].shape() == value(inputs_[k]).shape())) {
      throw ShapeError("replay: input " + std::to_string(k) + " has shape " +
                       input_values[k].shape().str());
    }
    values[inputs_[k].id()] = input_values[k];
  }
  std::vector<const Tensor*> in;
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    const Node& n = nodes_[i];
    if (n.op == Op::kLeaf) {
      if (!n.requires_grad) values[i] = n.value;
      continue;
    }
    in.resize(n.arg_count);
    for (std::size_t k = 0; k < n.arg_count; ++k)
      in[k] = &values[args_[n.arg_begin + k]];
    const Args a{n.scalar, n.a, n.b, &n.value.shape(),
                 n.aux >= 0 ? &index_maps_[n.aux] : nullptr};
    values[i] = compute(n.op, in, a);
  }
  std::vector<Tensor> result;
  result.reserve(outputs.size());
  for (const Var& v : outputs) result.push_back(values[v.id()]);
  return result;
}

void Tape::clear() {
  nodes_.clear();
  args_.clear();
  index_maps_.clear();
  inputs_.clear();
}

Recording record(
    const std::function<std::vector<Var>(Tape&, std::span<const Var>)>& f,
    std::vector<Tensor> inputs) {
  Recording rec;
  rec.tape = std::make_unique<Tape>();
  for (Tensor& t : inputs) rec.inputs.push_back(rec.tape->input(std::move(t)));
  rec.outputs = f(*rec.tape, rec.inputs);
  for (const Var& v : rec.outputs) rec.values.push_back(v.value());
  return rec;
}

// ---------------------------------------------------------------------------

namespace {

Var ap(Op op, std::initializer_list<Var> args, Attr attr = {}) {
  Tape* t = args.begin()->tape();
  if (!t) throw Error(std::string(op_name(op)) + ": invalid Var");
  return t->apply(op, std::span<const Var>(args.begin(), args.size()),
                  std::move(attr));
}

Attr scalar_attr(double c) {
  Attr a;
  a.scalar = c;
  return a;
}

}  // namespace

Var add(Var a, Var b) { return ap(Op::kAdd, {a, b}); }
Var sub(Var a, Var b) { return ap(Op::kSub, {a, b}); }
Var mul(Var a, Var b) { return ap(Op::kMul, {a, b}); }
Var div(Var a, Var b) { return ap(Op::kDiv, {a, b}); }
Var neg(Var a) { return ap(Op::kNeg, {a}); }
Var scale(Var a, double c) { return ap(Op::kScale, {a}, scalar_attr(c)); }
Var add_scalar(Var a, double c) {
  return ap(Op::kAddScalar, {a}, scalar_attr(c));
}
Var square(Var a) { return ap(Op::kSquare, {a}); }
Var pow(Var a, double p) { return ap(Op::kPow, {a}, scalar_attr(p)); }
Var abs(Var a) { return ap(Op::kAbs, {a}); }
Var tanh(Var a) { return ap(Op::kTanh, {a}); }
Var exp(Var a) { return ap(Op::kExp, {a}); }
Var log(Var a) { return ap(Op::kLog, {a}); }
Var sin(Var a) { return ap(Op::kSin, {a}); }
Var cos(Var a) { return ap(Op::kCos, {a}); }
Var sum(Var a) { return ap(Op::kSum, {a}); }
Var sum_rows(Var a) { return ap(Op::kSumRows, {a}); }

Var reshape(Var a, Shape s) {
  Attr at;
  at.shape = s;
  return ap(Op::kReshape, {a}, std::move(at));
}

Var slice(Var a, std::size_t begin, std::size_t end) {
  Attr at;
  at.a = begin;
  at.b = end;
  return ap(Op::kSlice, {a}, std::move(at));
}

Var concat(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat: no arguments");
  return parts[0].tape()->apply(Op::kConcat, parts);
}

Var matmul(Var a, Var b) { return ap(Op::kMatMul, {a, b}); }
Var transpose(Var a) { return ap(Op::kTranspose, {a}); }
Var solve(Var a, Var b) { return ap(Op::kSolve, {a, b}); }

Var gather(Var a, std::vector<std::int64_t> index, Shape out) {
  Attr at;
  at.shape = out;
  at.index = std::move(index);
  return ap(Op::kGather, {a}, std::move(at));
}

Var batch_matvec(Var m, Var v) { return ap(Op::kBatchMatVec, {m, v}); }
Var batch_outer(Var a, Var b) { return ap(Op::kBatchOuter, {a, b}); }

Var rotate(Var angle, Var v, bool transpose) {
  Attr at;
  at.a = transpose ? 1 : 0;
  return ap(Op::kRotate, {angle, v}, std::move(at));
}

}  // namespace coml::ad
