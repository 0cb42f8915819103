#include "fcraft/graph.hpp"

#include <cmath>
#include <cstring>

#include "fcraft/kernels.hpp"

namespace fcraft::diffcore {

namespace {

void require(bool ok, const std::string& msg) {
  if (!ok) throw std::invalid_argument(msg);
}

Graph* common_graph(Var a, Var b) {
  require(a.valid() && b.valid(), "graph op: invalid Var");
  require(a.graph == b.graph, "graph op: Vars from different graphs");
  return a.graph;
}

}  // namespace

const char* op_name(Op op) {
  switch (op) {
    case Op::kInput: return "input";
    case Op::kConst: return "const";
    case Op::kAdd: return "add";
    case Op::kSub: return "sub";
    case Op::kNeg: return "neg";
    case Op::kMul: return "mul";
    case Op::kDiv: return "div";
    case Op::kScale: return "scale";
    case Op::kAddScalar: return "add_scalar";
    case Op::kScaleByScalar: return "scale_by";
    case Op::kMatMul: return "matmul";
    case Op::kAddRowVec: return "add_row_vec";
    case Op::kAddColVec: return "add_col_vec";
    case Op::kRowSum: return "row_sum";
    case Op::kColSum: return "col_sum";
    case Op::kBcastRows: return "bcast_rows";
    case Op::kBcastCols: return "bcast_cols";
    case Op::kBcastScalar: return "bcast_scalar";
    case Op::kSum: return "sum";
    case Op::kDot: return "dot";
    case Op::kL2Norm: return "l2norm";
    case Op::kSqrt: return "sqrt";
    case Op::kExp: return "exp";
    case Op::kLog: return "log";
    case Op::kTanh: return "tanh";
    case Op::kSoftplus: return "softplus";
    case Op::kSigmoid: return "sigmoid";
    case Op::kRelu: return "relu";
    case Op::kLeakyRelu: return "leaky_relu";
    case Op::kConcatCols: return "concat_cols";
    case Op::kSliceCols: return "slice_cols";
    case Op::kEmbedCols: return "embed_cols";
  }
  return "?";
}

Var Graph::emit(Op op, Var in0, Var in1, double a, double b, Tensor value) {
  if (check_finite && !value.all_finite()) {
    throw NumericError(op, static_cast<std::int32_t>(nodes_.size()),
                       std::string("non-finite value produced by node ") +
                           std::to_string(nodes_.size()) + " (" + op_name(op) +
                           ")");
  }
  Node n;
  n.op = op;
  n.in = {in0.id, in1.id};
  n.a = a;
  n.b = b;
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return Var{static_cast<std::int32_t>(nodes_.size() - 1), this};
}

Var Graph::input(Tensor v) {
  return emit(Op::kInput, Var{}, Var{}, 0, 0, std::move(v));
}

Var Graph::constant(Tensor v) {
  return emit(Op::kConst, Var{}, Var{}, 0, 0, std::move(v));
}

Var Graph::constant_scalar(double v) { return constant(Tensor::scalar(v)); }

void Graph::check(Var v) const {
  require(v.graph == this, "Var belongs to a different graph");
  require(v.id >= 0 && static_cast<std::size_t>(v.id) < nodes_.size(),
          "Var id out of range (truncated?)");
}

const Tensor& Graph::value(Var v) const {
  check(v);
  return nodes_[v.id].value;
}

void Graph::truncate(std::size_t n) {
  require(n <= nodes_.size(), "truncate: mark past end");
  nodes_.resize(n);
}

// ---------------------------------------------------------------------------
// Forward ops.

namespace {

Tensor ew_binary(const Tensor& x, const Tensor& y, double (*f)(double, double),
                 const char* what) {
  require(x.same_shape(y), std::string(what) + ": shape mismatch " +
                               x.shape_str() + " vs " + y.shape_str());
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = f(x[i], y[i]);
  return out;
}

template <class F>
Tensor ew_unary(const Tensor& x, F f) {
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = f(x[i]);
  return out;
}

}  // namespace

Var add(Var x, Var y) {
  Graph* g = common_graph(x, y);
  return g->emit(Op::kAdd, x, y, 0, 0,
                 ew_binary(g->value(x), g->value(y),
                           [](double a, double b) { return a + b; }, "add"));
}

Var sub(Var x, Var y) {
  Graph* g = common_graph(x, y);
  return g->emit(Op::kSub, x, y, 0, 0,
                 ew_binary(g->value(x), g->value(y),
                           [](double a, double b) { return a - b; }, "sub"));
}

Var neg(Var x) {
  Graph* g = x.graph;
  return g->emit(Op::kNeg, x, Var{}, 0, 0,
                 ew_unary(g->value(x), [](double a) { return -a; }));
}

Var mul(Var x, Var y) {
  Graph* g = common_graph(x, y);
  return g->emit(Op::kMul, x, y, 0, 0,
                 ew_binary(g->value(x), g->value(y),
                           [](double a, double b) { return a * b; }, "mul"));
}

Var div(Var x, Var y) {
  Graph* g = common_graph(x, y);
  return g->emit(Op::kDiv, x, y, 0, 0,
                 ew_binary(g->value(x), g->value(y),
                           [](double a, double b) { return a / b; }, "div"));
}

Var scale(Var x, double c) {
  Graph* g = x.graph;
  return g->emit(Op::kScale, x, Var{}, c, 0,
                 ew_unary(g->value(x), [c](double a) { return a * c; }));
}

Var add_scalar(Var x, double c) {
  Graph* g = x.graph;
  return g->emit(Op::kAddScalar, x, Var{}, c, 0,
                 ew_unary(g->value(x), [c](double a) { return a + c; }));
}

Var scale_by(Var x, Var s) {
  Graph* g = common_graph(x, s);
  require(g->value(s).is_scalar(), "scale_by: scale must be a scalar node");
  const double sv = g->value(s)[0];
  return g->emit(Op::kScaleByScalar, x, s, 0, 0,
                 ew_unary(g->value(x), [sv](double a) { return a * sv; }));
}

Var matmul(Var a, Var b, bool ta, bool tb) {
  Graph* g = common_graph(a, b);
  const Tensor& A = g->value(a);
  const Tensor& B = g->value(b);
  require(A.rank() == 2 && B.rank() == 2, "matmul: rank-2 operands required");
  const std::size_t m = ta ? A.cols() : A.rows();
  const std::size_t k = ta ? A.rows() : A.cols();
  const std::size_t kb = tb ? B.cols() : B.rows();
  const std::size_t n = tb ? B.rows() : B.cols();
  require(k == kb, "matmul: inner dimensions disagree, " + A.shape_str() +
                       (ta ? "^T" : "") + " * " + B.shape_str() +
                       (tb ? "^T" : ""));
  Tensor out({m, n});
  kernels::matmul(A.data(), B.data(), out.data(), m, k, n, ta, tb);
  const double flags = (ta ? 1.0 : 0.0) + (tb ? 2.0 : 0.0);
  return g->emit(Op::kMatMul, a, b, flags, 0, std::move(out));
}

Var add_row_vec(Var m, Var v) {
  Graph* g = common_graph(m, v);
  const Tensor& M = g->value(m);
  const Tensor& V = g->value(v);
  require(M.rank() == 2 && V.rank() == 1 && V.size() == M.cols(),
          "add_row_vec: need (r x c) and (c)");
  Tensor out(M.shape());
  for (std::size_t r = 0; r < M.rows(); ++r)
    for (std::size_t c = 0; c < M.cols(); ++c)
      out.at(r, c) = M.at(r, c) + V[c];
  return g->emit(Op::kAddRowVec, m, v, 0, 0, std::move(out));
}

Var add_col_vec(Var m, Var v) {
  Graph* g = common_graph(m, v);
  const Tensor& M = g->value(m);
  const Tensor& V = g->value(v);
  require(M.rank() == 2 && V.rank() == 1 && V.size() == M.rows(),
          "add_col_vec: need (r x c) and (r)");
  Tensor out(M.shape());
  for (std::size_t r = 0; r < M.rows(); ++r)
    for (std::size_t c = 0; c < M.cols(); ++c)
      out.at(r, c) = M.at(r, c) + V[r];
  return g->emit(Op::kAddColVec, m, v, 0, 0, std::move(out));
}

Var row_sum(Var m) {
  Graph* g = m.graph;
  const Tensor& M = g->value(m);
  require(M.rank() == 2, "row_sum: rank-2 operand required");
  Tensor out({M.rows()});
  for (std::size_t r = 0; r < M.rows(); ++r) {
    double acc = 0.0;
    for (std::size_t c = 0; c < M.cols(); ++c) acc += M.at(r, c);
    out[r] = acc;
  }
  return g->emit(Op::kRowSum, m, Var{}, 0, 0, std::move(out));
}

Var col_sum(Var m) {
  Graph* g = m.graph;
  const Tensor& M = g->value(m);
  require(M.rank() == 2, "col_sum: rank-2 operand required");
  Tensor out({M.cols()});
  for (std::size_t r = 0; r < M.rows(); ++r)
    for (std::size_t c = 0; c < M.cols(); ++c) out[c] += M.at(r, c);
  return g->emit(Op::kColSum, m, Var{}, 0, 0, std::move(out));
}

Var bcast_rows(Var v, std::size_t rows) {
  Graph* g = v.graph;
  const Tensor& V = g->value(v);
  require(V.rank() == 1, "bcast_rows: rank-1 operand required");
  Tensor out({rows, V.size()});
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < V.size(); ++c) out.at(r, c) = V[c];
  return g->emit(Op::kBcastRows, v, Var{}, static_cast<double>(rows), 0,
                 std::move(out));
}

Var bcast_cols(Var v, std::size_t cols) {
  Graph* g = v.graph;
  const Tensor& V = g->value(v);
  require(V.rank() == 1, "bcast_cols: rank-1 operand required");
  Tensor out({V.size(), cols});
  for (std::size_t r = 0; r < V.size(); ++r)
    for (std::size_t c = 0; c < cols; ++c) out.at(r, c) = V[r];
  return g->emit(Op::kBcastCols, v, Var{}, static_cast<double>(cols), 0,
                 std::move(out));
}

namespace {

// Fill a tensor of `like`'s shape with a scalar node's value. Shape comes
// from in1, which is recorded only as a reference; no gradient flows to it.
Var bcast_scalar_like(Var s, Var like) {
  Graph* g = common_graph(s, like);
  require(g->value(s).is_scalar(), "bcast_scalar_like: scalar node required");
  Tensor out(g->value(like).shape(), g->value(s)[0]);
  return g->emit(Op::kBcastScalar, s, like, 0, 0, std::move(out));
}

Var embed_cols(Var m, std::size_t start, std::size_t parent_cols) {
  Graph* g = m.graph;
  const Tensor& M = g->value(m);
  require(M.rank() == 2 && start + M.cols() <= parent_cols,
          "embed_cols: slice does not fit");
  Tensor out({M.rows(), parent_cols});
  for (std::size_t r = 0; r < M.rows(); ++r)
    for (std::size_t c = 0; c < M.cols(); ++c) out.at(r, start + c) = M.at(r, c);
  return g->emit(Op::kEmbedCols, m, Var{}, static_cast<double>(start),
                 static_cast<double>(parent_cols), std::move(out));
}

}  // namespace

Var sum(Var x) {
  Graph* g = x.graph;
  const Tensor& X = g->value(x);
  double acc = 0.0;
  for (std::size_t i = 0; i < X.size(); ++i) acc += X[i];
  return g->emit(Op::kSum, x, Var{}, 0, 0, Tensor::scalar(acc));
}

Var mean(Var x) {
  return scale(sum(x), 1.0 / static_cast<double>(x.graph->value(x).size()));
}

Var dot(Var x, Var y) {
  Graph* g = common_graph(x, y);
  const Tensor& X = g->value(x);
  const Tensor& Y = g->value(y);
  require(X.same_shape(Y), "dot: shape mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < X.size(); ++i) acc += X[i] * Y[i];
  return g->emit(Op::kDot, x, y, 0, 0, Tensor::scalar(acc));
}

Var l2norm(Var x) {
  Graph* g = x.graph;
  const Tensor& X = g->value(x);
  double acc = 0.0;
  for (std::size_t i = 0; i < X.size(); ++i) acc += X[i] * X[i];
  return g->emit(Op::kL2Norm, x, Var{}, 0, 0, Tensor::scalar(std::sqrt(acc)));
}

Var sqrt(Var x) {
  Graph* g = x.graph;
  return g->emit(Op::kSqrt, x, Var{}, 0, 0,
                 ew_unary(g->value(x), [](double a) { return std::sqrt(a); }));
}

Var exp(Var x) {
  Graph* g = x.graph;
  return g->emit(Op::kExp, x, Var{}, 0, 0,
                 ew_unary(g->value(x), [](double a) { return std::exp(a); }));
}

Var log(Var x) {
  Graph* g = x.graph;
  return g->emit(Op::kLog, x, Var{}, 0, 0,
                 ew_unary(g->value(x), [](double a) { return std::log(a); }));
}

Var tanh(Var x) {
  Graph* g = x.graph;
  return g->emit(Op::kTanh, x, Var{}, 0, 0,
                 ew_unary(g->value(x), [](double a) { return std::tanh(a); }));
}

Var softplus(Var x) {
  Graph* g = x.graph;
  // Stable form; softplus(x) = max(x,0) + log1p(exp(-|x|)).
  return g->emit(Op::kSoftplus, x, Var{}, 0, 0,
                 ew_unary(g->value(x), [](double a) {
                   return std::max(a, 0.0) + std::log1p(std::exp(-std::fabs(a)));
                 }));
}

Var sigmoid(Var x) {
  Graph* g = x.graph;
  return g->emit(Op::kSigmoid, x, Var{}, 0, 0,
                 ew_unary(g->value(x), [](double a) {
                   if (a >= 0) return 1.0 / (1.0 + std::exp(-a));
                   const double e = std::exp(a);
                   return e / (1.0 + e);
                 }));
}

Var relu(Var x) {
  Graph* g = x.graph;
  return g->emit(Op::kRelu, x, Var{}, 0, 0,
                 ew_unary(g->value(x), [](double a) { return a > 0 ? a : 0.0; }));
}

Var leaky_relu(Var x, double slope) {
  Graph* g = x.graph;
  return g->emit(Op::kLeakyRelu, x, Var{}, slope, 0,
                 ew_unary(g->value(x),
                          [slope](double a) { return a > 0 ? a : slope * a; }));
}

Var concat_cols(Var a, Var b) {
  Graph* g = common_graph(a, b);
  const Tensor& A = g->value(a);
  const Tensor& B = g->value(b);
  require(A.rank() == 2 && B.rank() == 2 && A.rows() == B.rows(),
          "concat_cols: row counts disagree");
  Tensor out({A.rows(), A.cols() + B.cols()});
  for (std::size_t r = 0; r < A.rows(); ++r) {
    for (std::size_t c = 0; c < A.cols(); ++c) out.at(r, c) = A.at(r, c);
    for (std::size_t c = 0; c < B.cols(); ++c)
      out.at(r, A.cols() + c) = B.at(r, c);
  }
  return g->emit(Op::kConcatCols, a, b, static_cast<double>(A.cols()), 0,
                 std::move(out));
}

Var slice_cols(Var m, std::size_t start, std::size_t len) {
  Graph* g = m.graph;
  const Tensor& M = g->value(m);
  require(M.rank() == 2 && start + len <= M.cols(),
          "slice_cols: slice out of range");
  Tensor out({M.rows(), len});
  for (std::size_t r = 0; r < M.rows(); ++r)
    for (std::size_t c = 0; c < len; ++c) out.at(r, c) = M.at(r, start + c);
  return g->emit(Op::kSliceCols, m, Var{}, static_cast<double>(start),
                 static_cast<double>(len), std::move(out));
}

// ---------------------------------------------------------------------------
// Reverse sweep.

std::vector<Var> Graph::vjp(Var y, Var seed, std::span<const Var> wrt) {
  check(y);
  check(seed);
  require(value(y).same_shape(value(seed)), "vjp: seed shape must match y");
  for (Var w : wrt) {
    check(w);
    require(nodes_[w.id].op == Op::kInput, "vjp: wrt must be input nodes");
  }

  const std::int32_t yid = y.id;
  std::vector<std::int32_t> adj(yid + 1, -1);
  adj[yid] = seed.id;

  auto accum = [&](std::int32_t target, Var delta) {
    if (target < 0) return;
    if (nodes_[target].op == Op::kConst) return;
    if (adj[target] < 0) {
      adj[target] = delta.id;
    } else {
      adj[target] = add(Var{adj[target], this}, delta).id;
    }
  };

  for (std::int32_t i = yid; i >= 0; --i) {
    if (adj[i] < 0) continue;
    const Op op = nodes_[i].op;
    if (op == Op::kInput || op == Op::kConst) continue;
    const auto in = nodes_[i].in;
    const double a = nodes_[i].a;
    Var g{adj[i], this};
    Var out{i, this};
    Var x0{in[0], this};
    Var x1{in[1], this};

    switch (op) {
      case Op::kAdd:
        accum(in[0], g);
        accum(in[1], g);
        break;
      case Op::kSub:
        accum(in[0], g);
        accum(in[1], neg(g));
        break;
      case Op::kNeg:
        accum(in[0], neg(g));
        break;
      case Op::kMul:
        accum(in[0], mul(g, x1));
        accum(in[1], mul(g, x0));
        break;
      case Op::kDiv:
        accum(in[0], div(g, x1));
        accum(in[1], neg(div(mul(g, out), x1)));
        break;
      case Op::kScale:
        accum(in[0], scale(g, a));
        break;
      case Op::kAddScalar:
        accum(in[0], g);
        break;
      case Op::kScaleByScalar:
        accum(in[0], scale_by(g, x1));
        accum(in[1], dot(g, x0));
        break;
      case Op::kMatMul: {
        const bool ta = (static_cast<int>(a) & 1) != 0;
        const bool tb = (static_cast<int>(a) & 2) != 0;
        accum(in[0], ta ? matmul(x1, g, tb, true) : matmul(g, x1, false, !tb));
        accum(in[1], tb ? matmul(g, x0, true, ta) : matmul(x0, g, !ta, false));
        break;
      }
      case Op::kAddRowVec:
        accum(in[0], g);
        accum(in[1], col_sum(g));
        break;
      case Op::kAddColVec:
        accum(in[0], g);
        accum(in[1], row_sum(g));
        break;
      case Op::kRowSum:
        accum(in[0], bcast_cols(g, value(x0).cols()));
        break;
      case Op::kColSum:
        accum(in[0], bcast_rows(g, value(x0).rows()));
        break;
      case Op::kBcastRows:
        accum(in[0], col_sum(g));
        break;
      case Op::kBcastCols:
        accum(in[0], row_sum(g));
        break;
      case Op::kBcastScalar:
        accum(in[0], sum(g));
        break;
      case Op::kSum:
        accum(in[0], bcast_scalar_like(g, x0));
        break;
      case Op::kDot:
        accum(in[0], scale_by(x1, g));
        accum(in[1], scale_by(x0, g));
        break;
      case Op::kL2Norm:
        // Subgradient 0 at the origin: the tiny offset keeps the ratio finite
        // and the x factor zeroes it there.
        accum(in[0], scale_by(x0, div(g, add_scalar(out, 1e-30))));
        break;
      case Op::kSqrt:
        accum(in[0], div(g, scale(out, 2.0)));
        break;
      case Op::kExp:
        accum(in[0], mul(g, out));
        break;
      case Op::kLog:
        accum(in[0], div(g, x0));
        break;
      case Op::kTanh:
        accum(in[0], mul(g, add_scalar(neg(mul(out, out)), 1.0)));
        break;
      case Op::kSoftplus:
        accum(in[0], mul(g, sigmoid(x0)));
        break;
      case Op::kSigmoid:
        accum(in[0], mul(g, mul(out, add_scalar(neg(out), 1.0))));
        break;
      case Op::kRelu: {
        Tensor mask(value(x0).shape());
        for (std::size_t t = 0; t < mask.size(); ++t)
          mask[t] = value(x0)[t] > 0 ? 1.0 : 0.0;
        accum(in[0], mul(g, constant(std::move(mask))));
        break;
      }
      case Op::kLeakyRelu: {
        Tensor mask(value(x0).shape());
        for (std::size_t t = 0; t < mask.size(); ++t)
          mask[t] = value(x0)[t] > 0 ? 1.0 : a;
        accum(in[0], mul(g, constant(std::move(mask))));
        break;
      }
      case Op::kConcatCols: {
        const std::size_t c1 = static_cast<std::size_t>(a);
        accum(in[0], slice_cols(g, 0, c1));
        accum(in[1], slice_cols(g, c1, value(out).cols() - c1));
        break;
      }
      case Op::kSliceCols:
        accum(in[0], embed_cols(g, static_cast<std::size_t>(a),
                                value(x0).cols()));
        break;
      case Op::kEmbedCols:
        accum(in[0], slice_cols(g, static_cast<std::size_t>(a),
                                value(x0).cols()));
        break;
      case Op::kInput:
      case Op::kConst:
        break;
    }
  }

  std::vector<Var> out;
  out.reserve(wrt.size());
  for (Var w : wrt) {
    if (adj[w.id] >= 0)
      out.push_back(Var{adj[w.id], this});
    else
      out.push_back(constant(Tensor::zeros_like(value(w))));
  }
  return out;
}

std::vector<Var> Graph::gradients(Var y, std::span<const Var> wrt) {
  require(value(y).is_scalar(), "gradients: root must be scalar");
  return vjp(y, constant_scalar(1.0), wrt);
}

Var Graph::gradient(Var y, Var wrt) {
  const Var w[] = {wrt};
  return gradients(y, w)[0];
}

// ---------------------------------------------------------------------------
// Functional wrappers.

Tensor grad(const ScalarFn& f, const Tensor& x) {
  Graph g;
  Var xv = g.input(x);
  Var y = f(g, xv);
  return g.value(g.gradient(y, xv));
}

Tensor hvp(const ScalarFn& f, const Tensor& x, const Tensor& v) {
  require(x.same_shape(v), "hvp: v must have x's shape");
  Graph g;
  Var xv = g.input(x);
  Var y = f(g, xv);
  Var gx = g.gradient(y, xv);
  Var s = dot(gx, g.constant(v));
  return g.value(g.gradient(s, xv));
}

Tensor mixed_vhp(const ScalarFn2& f, const Tensor& x, const Tensor& y,
                 const Tensor& v) {
  require(x.same_shape(v), "mixed_vhp: v must have x's shape");
  Graph g;
  Var xv = g.input(x);
  Var yv = g.input(y);
  Var out = f(g, xv, yv);
  Var gx = g.gradient(out, xv);
  Var s = dot(gx, g.constant(v));
  return g.value(g.gradient(s, yv));
}

}  // namespace fcraft::diffcore
