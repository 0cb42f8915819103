#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "fcraft/graph.hpp"
#include "fcraft/optim.hpp"
#include "fcraft/rng.hpp"

using namespace fcraft;
using namespace fcraft::diffcore;

namespace {

double eval_scalar(const ScalarFn& f, const Tensor& x) {
  Graph g;
  Var xv = g.input(x);
  return g.value(f(g, xv))[0];
}

// Central finite difference of f along dir.
double fd_dir(const ScalarFn& f, const Tensor& x, const Tensor& dir, double h) {
  Tensor xp = x, xm = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    xp[i] += h * dir[i];
    xm[i] -= h * dir[i];
  }
  return (eval_scalar(f, xp) - eval_scalar(f, xm)) / (2.0 * h);
}

// Reverse-mode gradient against central differences along a few random
// directions. rel_tol applies to |analytic - fd| / max(|fd|, floor).
void check_grad(const ScalarFn& f, const Tensor& x, Rng& rng,
                double rel_tol = 1e-5, double h = 1e-5) {
  Tensor g = grad(f, x);
  REQUIRE(g.same_shape(x));
  for (int d = 0; d < 4; ++d) {
    Tensor dir = rng.normal_tensor(x.shape());
    const double fd = fd_dir(f, x, dir, h);
    const double an = dot_flat(g, dir);
    const double denom = std::max(std::fabs(fd), 1e-6);
    CHECK(std::fabs(an - fd) / denom <= rel_tol);
  }
}

Tensor random_like(Rng& rng, std::vector<std::size_t> shape) {
  return rng.normal_tensor(std::move(shape));
}

}  // namespace

// ---------------------------------------------------------------------------
// First order: every primitive against finite differences.

TEST_CASE("grad: quadratic and sum sanity values") {
  // f(x) = x^2 at x=3 -> 6.
  ScalarFn sq = [](Graph&, Var x) { return dot(x, x); };
  Tensor x = Tensor::scalar(3.0);
  Tensor gx = grad(sq, x);
  CHECK(gx[0] == doctest::Approx(6.0).epsilon(1e-12));

  // f(x) = sum(x) -> ones.
  ScalarFn s = [](Graph&, Var x) { return sum(x); };
  Tensor xs({3, 4}, 0.5);
  Tensor gs = grad(s, xs);
  for (std::size_t i = 0; i < gs.size(); ++i) CHECK(gs[i] == 1.0);
}

TEST_CASE("grad: finite differences across the primitive set") {
  Rng rng(101);
  const Tensor c23 = random_like(rng, {2, 3});
  const Tensor c34 = random_like(rng, {3, 4});
  const Tensor w23 = random_like(rng, {2, 3});
  const Tensor w24 = random_like(rng, {2, 4});
  const Tensor v3 = random_like(rng, {3});
  const Tensor v2 = random_like(rng, {2});

  // Each case weights the op output by a fixed random tensor so the incoming
  // adjoint is non-uniform, then reduces to a scalar.
  auto weighted = [](Var y, const Tensor& w) {
    return dot(y, y.graph->constant(w));
  };

  std::vector<std::pair<const char*, ScalarFn>> cases;
  cases.emplace_back("add", [&](Graph& g, Var x) {
    return weighted(add(x, g.constant(c23)), w23);
  });
  cases.emplace_back("sub", [&](Graph& g, Var x) {
    return weighted(sub(g.constant(c23), x), w23);
  });
  cases.emplace_back("neg", [&](Graph&, Var x) { return weighted(neg(x), w23); });
  cases.emplace_back("mul", [&](Graph& g, Var x) {
    return weighted(mul(x, g.constant(c23)), w23);
  });
  cases.emplace_back("div_num", [&](Graph& g, Var x) {
    return weighted(div(x, add_scalar(mul(g.constant(c23), g.constant(c23)), 1.0)), w23);
  });
  cases.emplace_back("div_den", [&](Graph& g, Var x) {
    return weighted(div(g.constant(c23), add_scalar(mul(x, x), 1.0)), w23);
  });
  cases.emplace_back("scale", [&](Graph&, Var x) {
    return weighted(scale(x, -1.7), w23);
  });
  cases.emplace_back("add_scalar", [&](Graph&, Var x) {
    return weighted(add_scalar(x, 0.3), w23);
  });
  cases.emplace_back("scale_by", [&](Graph& g, Var x) {
    Var s = mean(x);
    return weighted(scale_by(add(x, g.constant(c23)), s), w23);
  });
  cases.emplace_back("matmul_nn", [&](Graph& g, Var x) {
    return weighted(matmul(x, g.constant(c34)), w24);
  });
  cases.emplace_back("matmul_nt", [&](Graph& g, Var x) {
    Tensor c43({4, 3});
    for (std::size_t i = 0; i < 12; ++i) c43[i] = c34[i];
    return weighted(matmul(x, g.constant(c43), false, true), w24);
  });
  cases.emplace_back("matmul_tn", [&](Graph& g, Var x) {
    // x is 2x3; use it transposed against a 2x4 constant.
    Tensor c24 = w24;
    Tensor w34 = Tensor({3, 4}, 0.25);
    return weighted(matmul(x, g.constant(c24), true, false), w34);
  });
  cases.emplace_back("add_row_vec", [&](Graph& g, Var x) {
    return weighted(add_row_vec(x, g.constant(v3)), w23);
  });
  cases.emplace_back("add_col_vec", [&](Graph& g, Var x) {
    return weighted(add_col_vec(x, g.constant(v2)), w23);
  });
  cases.emplace_back("row_sum", [&](Graph&, Var x) {
    return weighted(row_sum(x), v2);
  });
  cases.emplace_back("col_sum", [&](Graph&, Var x) {
    return weighted(col_sum(x), v3);
  });
  cases.emplace_back("sum", [&](Graph&, Var x) { return sum(mul(x, x)); });
  cases.emplace_back("mean", [&](Graph&, Var x) { return mean(mul(x, x)); });
  cases.emplace_back("dot", [&](Graph& g, Var x) {
    return dot(x, mul(x, g.constant(c23)));
  });
  cases.emplace_back("l2norm", [&](Graph& g, Var x) {
    return l2norm(sub(x, g.constant(c23)));
  });
  cases.emplace_back("tanh", [&](Graph&, Var x) { return weighted(tanh(x), w23); });
  cases.emplace_back("softplus", [&](Graph&, Var x) {
    return weighted(softplus(x), w23);
  });
  cases.emplace_back("sigmoid", [&](Graph&, Var x) {
    return weighted(sigmoid(x), w23);
  });
  cases.emplace_back("exp", [&](Graph&, Var x) { return weighted(exp(x), w23); });
  cases.emplace_back("concat", [&](Graph&, Var x) {
    Var both = concat_cols(x, mul(x, x));
    Tensor w26 = Tensor({2, 6}, 0.4);
    return weighted(both, w26);
  });
  cases.emplace_back("slice", [&](Graph&, Var x) {
    Tensor w22 = Tensor({2, 2}, 0.8);
    return weighted(slice_cols(x, 1, 2), w22);
  });

  for (auto& [name, fn] : cases) {
    INFO("primitive: " << name);
    Tensor x = random_like(rng, {2, 3});
    check_grad(fn, x, rng);
  }

  // Positive-domain primitives.
  ScalarFn flog = [&](Graph&, Var x) {
    return weighted(log(add_scalar(mul(x, x), 1.0)), w23);
  };
  ScalarFn fsqrt = [&](Graph&, Var x) {
    return weighted(sqrt(add_scalar(mul(x, x), 0.5)), w23);
  };
  check_grad(flog, random_like(rng, {2, 3}), rng);
  check_grad(fsqrt, random_like(rng, {2, 3}), rng);

  // Piecewise-linear primitives, evaluated away from the kink.
  ScalarFn frelu = [&](Graph&, Var x) { return weighted(relu(x), w23); };
  ScalarFn fleaky = [&](Graph&, Var x) {
    return weighted(leaky_relu(x, 0.2), w23);
  };
  Tensor xr({2, 3});
  for (std::size_t i = 0; i < xr.size(); ++i)
    xr[i] = (i % 2 ? 1.0 : -1.0) * (0.3 + 0.1 * static_cast<double>(i));
  check_grad(frelu, xr, rng);
  check_grad(fleaky, xr, rng);

  // Broadcast ops, gradient w.r.t. the vector.
  ScalarFn fbr = [&](Graph&, Var x) {
    return weighted(bcast_rows(x, 2), w23);
  };
  check_grad(fbr, random_like(rng, {3}), rng);
  ScalarFn fbc = [&](Graph&, Var x) {
    return weighted(bcast_cols(x, 3), w23);
  };
  check_grad(fbc, random_like(rng, {2}), rng);

  // Gradient w.r.t. the vector operand of a row broadcast add.
  ScalarFn frowv = [&](Graph& g, Var x) {
    return weighted(add_row_vec(g.constant(c23), x), w23);
  };
  check_grad(frowv, random_like(rng, {3}), rng);
}

TEST_CASE("grad: two layer tanh network against finite differences") {
  Rng rng(17);
  const Tensor w1 = rng.normal_tensor({5, 8}, 0.5);
  const Tensor b1 = rng.normal_tensor({8}, 0.1);
  const Tensor w2 = rng.normal_tensor({8, 1}, 0.5);
  ScalarFn net = [&](Graph& g, Var x) {
    Var h = tanh(add_row_vec(matmul(x, g.constant(w1)), g.constant(b1)));
    return sum(matmul(h, g.constant(w2)));
  };
  Tensor x = rng.normal_tensor({3, 5});
  check_grad(net, x, rng, 1e-6);
}

// ---------------------------------------------------------------------------
// Second order.

TEST_CASE("hvp: identity and diagonal quadratics") {
  ScalarFn half_sq = [](Graph&, Var x) { return scale(dot(x, x), 0.5); };
  Tensor x = Tensor::vec({1.0, -2.0, 0.5});
  Tensor v = Tensor::vec({0.3, 0.7, -1.1});
  Tensor hv = hvp(half_sq, x, v);
  CHECK(max_abs_diff(hv, v) <= 1e-12);

  // f = 0.5 x^T diag(2,4) x.
  ScalarFn diag_q = [](Graph& g, Var x) {
    Var d = g.constant(Tensor::vec({2.0, 4.0}));
    return scale(dot(x, mul(d, x)), 0.5);
  };
  Tensor x2 = Tensor::vec({1.0, 1.0});
  Tensor v2 = Tensor::vec({1.0, 1.0});
  Tensor hv2 = hvp(diag_q, x2, v2);
  CHECK(hv2[0] == doctest::Approx(2.0).epsilon(1e-12));
  CHECK(hv2[1] == doctest::Approx(4.0).epsilon(1e-12));
}

namespace {

// Small nonlinear net used by all the second-order cases. The l2norm head
// matches how inner losses look in the rest of the codebase.
struct SecondOrderFixture {
  Rng rng{23};
  Tensor w1 = rng.normal_tensor({4, 6}, 0.6);
  Tensor b1 = rng.normal_tensor({6}, 0.1);
  Tensor w2 = rng.normal_tensor({6, 3}, 0.6);
  Tensor target = rng.normal_tensor({1, 3});

  ScalarFn fn() const {
    return [this](Graph& g, Var x) {
      Var h = tanh(add_row_vec(matmul(x, g.constant(w1)), g.constant(b1)));
      Var out = tanh(matmul(h, g.constant(w2)));
      return l2norm(sub(out, g.constant(target)));
    };
  }
};

}  // namespace

TEST_CASE("hvp: matches finite differences of the gradient") {
  SecondOrderFixture fx;
  Rng rng(31);
  Tensor x = rng.normal_tensor({1, 4});
  Tensor v = rng.normal_tensor({1, 4});
  Tensor hv = hvp(fx.fn(), x, v);

  const double h = 1e-5;
  Tensor xp = x, xm = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    xp[i] += h * v[i];
    xm[i] -= h * v[i];
  }
  Tensor gp = grad(fx.fn(), xp);
  Tensor gm = grad(fx.fn(), xm);
  Tensor fd(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) fd[i] = (gp[i] - gm[i]) / (2 * h);

  double num = 0, den = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    num += (hv[i] - fd[i]) * (hv[i] - fd[i]);
    den += fd[i] * fd[i];
  }
  CHECK(std::sqrt(num / std::max(den, 1e-12)) <= 1e-4);
}

TEST_CASE("hvp: linear in v") {
  SecondOrderFixture fx;
  Rng rng(37);
  Tensor x = rng.normal_tensor({1, 4});
  Tensor v = rng.normal_tensor({1, 4});
  Tensor w = rng.normal_tensor({1, 4});
  const double a = 1.3, b = -0.8;
  Tensor combo(v.shape());
  for (std::size_t i = 0; i < v.size(); ++i) combo[i] = a * v[i] + b * w[i];
  Tensor lhs = hvp(fx.fn(), x, combo);
  Tensor hv = hvp(fx.fn(), x, v);
  Tensor hw = hvp(fx.fn(), x, w);
  for (std::size_t i = 0; i < v.size(); ++i)
    CHECK(std::fabs(lhs[i] - (a * hv[i] + b * hw[i])) <= 1e-10);
}

TEST_CASE("hvp: symmetric bilinear form") {
  SecondOrderFixture fx;
  Rng rng(41);
  Tensor x = rng.normal_tensor({1, 4});
  for (int rep = 0; rep < 5; ++rep) {
    Tensor v = rng.normal_tensor({1, 4});
    Tensor w = rng.normal_tensor({1, 4});
    const double vhw = dot_flat(v, hvp(fx.fn(), x, w));
    const double whv = dot_flat(w, hvp(fx.fn(), x, v));
    CHECK(std::fabs(vhw - whv) <= 1e-8);
  }
}

TEST_CASE("mixed_vhp: bilinear and least squares forms") {
  // f(x, y) = x . y  ->  v^T d2f/dxdy = v.
  ScalarFn2 bilinear = [](Graph&, Var x, Var y) { return dot(x, y); };
  Tensor x = Tensor::vec({1.0, 2.0, 3.0});
  Tensor y = Tensor::vec({-1.0, 0.5, 2.0});
  Tensor v = Tensor::vec({0.2, -0.4, 1.0});
  Tensor out = mixed_vhp(bilinear, x, y, v);
  CHECK(max_abs_diff(out, v) <= 1e-12);

  // f(x, y) = 0.5 || x - A y ||^2  ->  v^T d2f/dxdy = -A^T v.
  Rng rng(43);
  Tensor a = rng.normal_tensor({3, 2});
  ScalarFn2 lsq = [&](Graph& g, Var x, Var y) {
    // Treat vectors as 1-row matrices for the matmul: x (3), y (2).
    Var ycol = bcast_cols(y, 1);               // 2x1
    Var ay = matmul(g.constant(a), ycol);      // 3x1
    Var diff = sub(bcast_cols(x, 1), ay);
    return scale(dot(diff, diff), 0.5);
  };
  Tensor x3 = rng.normal_tensor({3});
  Tensor y2 = rng.normal_tensor({2});
  Tensor v3 = rng.normal_tensor({3});
  Tensor got = mixed_vhp(lsq, x3, y2, v3);
  Tensor expect({2});
  for (std::size_t j = 0; j < 2; ++j) {
    double acc = 0;
    for (std::size_t i = 0; i < 3; ++i) acc += a.at(i, j) * v3[i];
    expect[j] = -acc;
  }
  CHECK(max_abs_diff(got, expect) <= 1e-10);
}

TEST_CASE("mixed_vhp: finite difference cross check on a nonlinear net") {
  Rng rng(47);
  Tensor w = rng.normal_tensor({3, 4}, 0.7);
  ScalarFn2 f = [&](Graph& g, Var x, Var y) {
    Var h = tanh(add(matmul(x, g.constant(w)), y));
    return l2norm(h);
  };
  Tensor x = rng.normal_tensor({2, 3});
  Tensor y = rng.normal_tensor({2, 4});
  Tensor v = rng.normal_tensor({2, 3});

  Tensor got = mixed_vhp(f, x, y, v);

  const double h = 1e-5;
  Tensor xp = x, xm = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    xp[i] += h * v[i];
    xm[i] -= h * v[i];
  }
  auto grad_y = [&](const Tensor& xx) {
    Graph g;
    Var xv = g.constant(xx);
    Var yv = g.input(y);
    Var hvar = tanh(add(matmul(xv, g.constant(w)), yv));
    Var loss = l2norm(hvar);
    return g.value(g.gradient(loss, yv));
  };
  Tensor gp = grad_y(xp), gm = grad_y(xm);
  double num = 0, den = 0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double fd = (gp[i] - gm[i]) / (2 * h);
    num += (got[i] - fd) * (got[i] - fd);
    den += fd * fd;
  }
  CHECK(std::sqrt(num / std::max(den, 1e-12)) <= 1e-4);
}

// ---------------------------------------------------------------------------
// Determinism and error handling.

TEST_CASE("tape determinism: identical runs give bitwise identical results") {
  SecondOrderFixture fx;
  Rng rng(53);
  Tensor x = rng.normal_tensor({1, 4});
  Tensor v = rng.normal_tensor({1, 4});
  Tensor g1 = grad(fx.fn(), x);
  Tensor g2 = grad(fx.fn(), x);
  CHECK(g1.bitwise_equal(g2));
  Tensor h1 = hvp(fx.fn(), x, v);
  Tensor h2 = hvp(fx.fn(), x, v);
  CHECK(h1.bitwise_equal(h2));
}

TEST_CASE("gradients refuses a non scalar root") {
  Graph g;
  Var x = g.input(Tensor({2, 2}, 1.0));
  Var y = mul(x, x);
  CHECK_THROWS_AS(g.gradient(y, x), std::invalid_argument);
}

TEST_CASE("non finite forward values raise NumericError naming the node") {
  Graph g;
  Var x = g.input(Tensor::vec({-1.0}));
  bool caught = false;
  try {
    log(x);  // log(-1) = NaN
  } catch (const NumericError& e) {
    caught = true;
    CHECK(e.op() == Op::kLog);
    CHECK(std::string(e.what()).find("log") != std::string::npos);
  }
  CHECK(caught);
}

TEST_CASE("truncate drops nodes and invalidates later handles") {
  Graph g;
  Var x = g.input(Tensor::vec({1.0, 2.0}));
  const std::size_t mark = g.size();
  Var y = mul(x, x);
  CHECK(g.size() > mark);
  g.truncate(mark);
  CHECK(g.size() == mark);
  CHECK_THROWS_AS(g.value(y), std::invalid_argument);
  // The graph remains usable after truncation.
  Var z = add(x, x);
  CHECK(g.value(z)[0] == 2.0);
}

// ---------------------------------------------------------------------------
// Optimizers against independently coded reference traces.

TEST_CASE("adam: zero gradient leaves the parameter unchanged") {
  AdamState st(0.01);
  Tensor p = Tensor::vec({1.0, -2.0});
  Tensor z({2});
  Tensor before = p;
  for (int i = 0; i < 3; ++i) adam_step(st, p, z);
  CHECK(p.bitwise_equal(before));
}

TEST_CASE("adam: ten step trace matches a hand rolled reference") {
  const double lr = 0.05, b1 = 0.9, b2 = 0.999, eps = 1e-8;
  AdamState st(lr, b1, b2, eps);
  Tensor p = Tensor::vec({0.5, -1.5, 2.0});

  // Reference implementation written as a flat loop, no shared code.
  double rp[3] = {0.5, -1.5, 2.0};
  double m[3] = {0, 0, 0}, v[3] = {0, 0, 0};
  for (int t = 1; t <= 10; ++t) {
    double gbuf[3];
    for (int i = 0; i < 3; ++i) gbuf[i] = std::sin(0.3 * t + i);
    Tensor g({3}, std::vector<double>(gbuf, gbuf + 3));
    adam_step(st, p, g);
    for (int i = 0; i < 3; ++i) {
      m[i] = b1 * m[i] + (1 - b1) * gbuf[i];
      v[i] = b2 * v[i] + (1 - b2) * gbuf[i] * gbuf[i];
      const double mh = m[i] / (1 - std::pow(b1, t));
      const double vh = v[i] / (1 - std::pow(b2, t));
      rp[i] -= lr * mh / (std::sqrt(vh) + eps);
    }
  }
  for (int i = 0; i < 3; ++i) CHECK(std::fabs(p[i] - rp[i]) <= 1e-12);
}

TEST_CASE("adam: descends on a quadratic") {
  AdamState st(0.05);
  Tensor p = Tensor::vec({3.0, -4.0});
  for (int t = 0; t < 400; ++t) {
    Tensor g({2});
    g[0] = 2 * p[0];
    g[1] = 2 * p[1];
    adam_step(st, p, g);
  }
  CHECK(std::fabs(p[0]) < 0.05);
  CHECK(std::fabs(p[1]) < 0.05);
}

TEST_CASE("rmsprop: trace matches a hand rolled reference") {
  const double lr = 0.01, alpha = 0.99, eps = 1e-8;
  RmsPropState st(lr, alpha, eps);
  Tensor p = Tensor::vec({1.0, 2.0});
  double rp[2] = {1.0, 2.0};
  double sq[2] = {0, 0};
  for (int t = 1; t <= 10; ++t) {
    double gbuf[2] = {std::cos(0.2 * t), std::sin(0.4 * t) + 0.1};
    Tensor g({2}, std::vector<double>(gbuf, gbuf + 2));
    rmsprop_step(st, p, g);
    for (int i = 0; i < 2; ++i) {
      sq[i] = alpha * sq[i] + (1 - alpha) * gbuf[i] * gbuf[i];
      rp[i] -= lr * gbuf[i] / (std::sqrt(sq[i]) + eps);
    }
  }
  for (int i = 0; i < 2; ++i) CHECK(std::fabs(p[i] - rp[i]) <= 1e-12);
}

TEST_CASE("optimizers reject mismatched shapes") {
  AdamState st;
  Tensor p = Tensor::vec({1.0, 2.0});
  Tensor g({3}, 0.0);
  CHECK_THROWS_AS(adam_step(st, p, g), std::invalid_argument);
  RmsPropState rst;
  CHECK_THROWS_AS(rmsprop_step(rst, p, g), std::invalid_argument);
}
