#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "fcraft/tensor.hpp"

namespace fcraft::diffcore {

class Graph;

// Lightweight handle to a node in a Graph. Cheap to copy; invalidated by
// Graph::truncate past its id.
struct Var {
  std::int32_t id = -1;
  Graph* graph = nullptr;
  bool valid() const { return id >= 0 && graph != nullptr; }
};

enum class Op : std::uint8_t {
  kInput, kConst,
  kAdd, kSub, kNeg, kMul, kDiv,
  kScale, kAddScalar, kScaleByScalar,
  kMatMul,
  kAddRowVec, kAddColVec,
  kRowSum, kColSum, kBcastRows, kBcastCols, kBcastScalar,
  kSum, kDot, kL2Norm, kSqrt, kExp, kLog,
  kTanh, kSoftplus, kSigmoid, kRelu, kLeakyRelu,
  kConcatCols, kSliceCols, kEmbedCols,
};

const char* op_name(Op op);

// Raised when a forward value stops being finite; carries the offending node
// so training loops can report where a run blew up.
class NumericError : public std::runtime_error {
 public:
  NumericError(Op op, std::int32_t node, const std::string& what)
      : std::runtime_error(what), op_(op), node_(node) {}
  Op op() const { return op_; }
  std::int32_t node() const { return node_; }

 private:
  Op op_;
  std::int32_t node_;
};

// Define-by-run computation graph over Tensors. Every operation records its
// result, so values are available immediately; vjp() then *appends* the
// adjoint computation as ordinary graph nodes, which is what makes gradients
// themselves differentiable (gradients-of-gradients for Hessian-vector and
// mixed second-order products just run vjp again over the longer graph).
//
// Graphs are plain objects with no global registry: concurrent computations
// on different Graph instances never share state.
class Graph {
 public:
  // Differentiable leaf.
  Var input(Tensor v);
  // Non-differentiable leaf; vjp treats it as constant.
  Var constant(Tensor v);
  Var constant_scalar(double v);

  const Tensor& value(Var v) const;
  std::size_t size() const { return nodes_.size(); }

  // Drops every node with id >= n. The caller promises not to use handles
  // past the mark afterwards; used to keep iterative second-order loops from
  // growing the graph without bound.
  void truncate(std::size_t n);

  // Adjoint of <y, seed> w.r.t. each of wrt, as differentiable graph nodes.
  // seed must have y's shape. Inputs y does not depend on get a zero tensor.
  std::vector<Var> vjp(Var y, Var seed, std::span<const Var> wrt);

  // vjp of a scalar y seeded with 1.
  std::vector<Var> gradients(Var y, std::span<const Var> wrt);
  Var gradient(Var y, Var wrt);

  // When set (default), every emitted node's value is scanned and a
  // NumericError is thrown on the first non-finite entry.
  bool check_finite = true;

  Var emit(Op op, Var in0, Var in1, double a, double b, Tensor value);

 private:
  struct Node {
    Op op;
    std::array<std::int32_t, 2> in{-1, -1};
    double a = 0.0, b = 0.0;
    Tensor value;
  };

  void check(Var v) const;
  std::vector<Node> nodes_;
};

// Graph-building operations. All of them validate shapes eagerly.
Var add(Var x, Var y);
Var sub(Var x, Var y);
Var neg(Var x);
Var mul(Var x, Var y);            // elementwise
Var div(Var x, Var y);            // elementwise
Var scale(Var x, double c);
Var add_scalar(Var x, double c);
Var scale_by(Var x, Var s);       // x * s, s a scalar node
Var matmul(Var a, Var b, bool ta = false, bool tb = false);
Var add_row_vec(Var m, Var v);    // m(r x c) + v(c), broadcast down rows
Var add_col_vec(Var m, Var v);    // m(r x c) + v(r), broadcast across cols
Var row_sum(Var m);               // (r x c) -> (r)
Var col_sum(Var m);               // (r x c) -> (c)
Var bcast_rows(Var v, std::size_t rows);  // (c) -> (rows x c)
Var bcast_cols(Var v, std::size_t cols);  // (r) -> (r x cols)
Var sum(Var x);                   // -> scalar
Var mean(Var x);                  // -> scalar
Var dot(Var x, Var y);            // -> scalar
Var l2norm(Var x);                // -> scalar, subgradient 0 at the origin
Var sqrt(Var x);
Var exp(Var x);
Var log(Var x);
Var tanh(Var x);
Var softplus(Var x);
Var sigmoid(Var x);
Var relu(Var x);
Var leaky_relu(Var x, double slope);
Var concat_cols(Var a, Var b);
Var slice_cols(Var m, std::size_t start, std::size_t len);

// Convenience closed-form entry points mirroring how callers in this codebase
// usually need derivatives. All build a private Graph per call.
using ScalarFn = std::function<Var(Graph&, Var)>;
using ScalarFn2 = std::function<Var(Graph&, Var, Var)>;

// d f / d x evaluated at x.
Tensor grad(const ScalarFn& f, const Tensor& x);
// (d^2 f / dx dx) * v.
Tensor hvp(const ScalarFn& f, const Tensor& x, const Tensor& v);
// v^T (d^2 f / dx dy); the result has y's shape.
Tensor mixed_vhp(const ScalarFn2& f, const Tensor& x, const Tensor& y,
                 const Tensor& v);

}  // namespace fcraft::diffcore
