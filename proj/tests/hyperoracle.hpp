#pragma once

// Reference machinery for checking hypergradients against finite differences.
//
// The production path approximates the inverse Hessian with a truncated
// series, and the quality of a finite-difference comparison hinges on two
// things the normal solver does not give us: inner solutions polished to
// machine-precision stationarity (Adam noise of 1e-6 in z* swamps an h=1e-4
// difference quotient) and a series budget matched to the actual curvature
// of the instance. So the oracle solves the inner problem with a dense
// Newton method, takes the exact eigenvalue range of the inner Hessian, and
// derives the step size and term count from it. Instances whose Hessian is
// indefinite at the solution (a saddle, where the implicit-function argument
// does not apply) or too ill-conditioned for the budget are rejected up
// front, before any gradients are compared.
//
// Dense linear algebra is fine here: latent dimension stays tiny in tests.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include "fcraft/graph.hpp"
#include "fcraft/nets.hpp"
#include "fcraft/tensor.hpp"

namespace testoracle {

struct InnerProbe {
  const fcraft::nets::LayerStack* enc;
  const fcraft::nets::LayerStack* gen;
  fcraft::Tensor f;

  double loss_at(const fcraft::Tensor& z) const {
    fcraft::Tensor r = enc->forward_eval(gen->forward_eval(z));
    double s = 0;
    for (std::size_t i = 0; i < r.size(); ++i) {
      const double d = r[i] - f[i];
      s += d * d;
    }
    return std::sqrt(s);
  }

  fcraft::Tensor grad_at(const fcraft::Tensor& z) const {
    fcraft::diffcore::Graph g;
    fcraft::diffcore::Var zv = g.input(z);
    fcraft::diffcore::Var l = fcraft::diffcore::l2norm(fcraft::diffcore::sub(
        g.constant(f), enc->forward(g, gen->forward(g, zv))));
    return g.value(g.gradient(l, zv));
  }

  // Dense inner Hessian, one column per basis vector.
  void dense_h(const fcraft::Tensor& z,
               std::vector<std::vector<double>>& h) const {
    fcraft::diffcore::Graph g;
    fcraft::diffcore::Var zv = g.input(z);
    fcraft::diffcore::Var l = fcraft::diffcore::l2norm(fcraft::diffcore::sub(
        g.constant(f), enc->forward(g, gen->forward(g, zv))));
    fcraft::diffcore::Var gz = g.gradient(l, zv);
    const std::size_t zd = z.size();
    const std::size_t mark = g.size();
    h.assign(zd, std::vector<double>(zd, 0.0));
    for (std::size_t j = 0; j < zd; ++j) {
      fcraft::Tensor e(z.shape());
      e[j] = 1.0;
      g.truncate(mark);
      fcraft::diffcore::Var s = fcraft::diffcore::dot(gz, g.constant(e));
      fcraft::Tensor col = g.value(g.gradient(s, zv));
      for (std::size_t i = 0; i < zd; ++i) h[i][j] = col[i];
    }
  }
};

// Gaussian elimination with partial pivoting, in place on copies.
inline void solve_lin(std::vector<std::vector<double>> a,
                      std::vector<double>& b) {
  const std::size_t n = b.size();
  for (std::size_t c = 0; c < n; ++c) {
    std::size_t piv = c;
    for (std::size_t r = c + 1; r < n; ++r)
      if (std::fabs(a[r][c]) > std::fabs(a[piv][c])) piv = r;
    std::swap(a[c], a[piv]);
    std::swap(b[c], b[piv]);
    if (std::fabs(a[c][c]) < 1e-300) a[c][c] = 1e-300;
    for (std::size_t r = 0; r < n; ++r) {
      if (r == c) continue;
      const double fac = a[r][c] / a[c][c];
      for (std::size_t k = 0; k < n; ++k) a[r][k] -= fac * a[c][k];
      b[r] -= fac * b[c];
    }
  }
  for (std::size_t i = 0; i < n; ++i) b[i] /= a[i][i];
}

// Newton with backtracking from a warm start. Stops once the gradient norm
// is at roundoff or a full backtrack fails to improve the loss.
inline fcraft::Tensor newton_polish(const InnerProbe& pr, fcraft::Tensor z,
                                    int rounds) {
  std::vector<std::vector<double>> h;
  for (int it = 0; it < rounds; ++it) {
    fcraft::Tensor g = pr.grad_at(z);
    if (fcraft::l2_norm(g) < 1e-12) break;
    pr.dense_h(z, h);
    std::vector<double> step(z.size());
    for (std::size_t i = 0; i < z.size(); ++i) step[i] = -g[i];
    solve_lin(h, step);
    const double base = pr.loss_at(z);
    double t = 1.0;
    while (t > 1e-8) {
      fcraft::Tensor zt = z;
      for (std::size_t i = 0; i < z.size(); ++i) zt[i] += t * step[i];
      if (pr.loss_at(zt) < base) {
        z = zt;
        break;
      }
      t *= 0.5;
    }
    if (t <= 1e-8) break;
  }
  return z;
}

// Eigenvalue range of a symmetric matrix by cyclic Jacobi rotations.
inline void eigen_range(std::vector<std::vector<double>> a, double* lmin,
                        double* lmax) {
  const std::size_t n = a.size();
  for (int sweep = 0; sweep < 60; ++sweep)
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q) {
        if (std::fabs(a[p][q]) < 1e-15) continue;
        const double th = 0.5 * std::atan2(2 * a[p][q], a[q][q] - a[p][p]);
        const double c = std::cos(th), s = std::sin(th);
        for (std::size_t k = 0; k < n; ++k) {
          const double ap = a[p][k], aq = a[q][k];
          a[p][k] = c * ap - s * aq;
          a[q][k] = s * ap + c * aq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double ap = a[k][p], aq = a[k][q];
          a[k][p] = c * ap - s * aq;
          a[k][q] = s * ap + c * aq;
        }
      }
  *lmin = 1e300;
  *lmax = -1e300;
  for (std::size_t i = 0; i < n; ++i) {
    *lmin = std::min(*lmin, a[i][i]);
    *lmax = std::max(*lmax, a[i][i]);
  }
}

// Series budget for a given eigenvalue range: contraction step plus enough
// terms for the slowest mode to decay below 1e-4 of its weight.
inline void series_budget(double lmin, double lmax, double* alpha,
                          long* iters) {
  *alpha = 0.9 / lmax;
  *iters = std::lround(10.0 / (*alpha * lmin));
  if (*iters > 500000) *iters = 500000;
}

}  // namespace testoracle
