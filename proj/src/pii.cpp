#include "fcraft/pii.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

#include "fcraft/attacks.hpp"
#include "fcraft/graph.hpp"
#include "fcraft/kernels.hpp"
#include "fcraft/optim.hpp"
#include "fcraft/rng.hpp"
#include "fcraft/stats.hpp"

namespace fcraft::pii {

using diffcore::Graph;
using diffcore::Var;

namespace {

// Jonker-Volgenant style shortest augmenting path assignment, O(n^3).
// Returns the minimum total cost over perfect matchings of the square cost
// matrix (row-major, n x n).
double assignment_cost(const std::vector<double>& cost, std::size_t n) {
  const double kInf = std::numeric_limits<double>::infinity();
  // 1-based arrays; row potential u, column potential v, p[j] = row matched
  // to column j, way[j] = previous column on the augmenting path.
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<std::size_t> p(n + 1, 0), way(n + 1, 0);
  for (std::size_t i = 1; i <= n; ++i) {
    p[0] = i;
    std::size_t j0 = 0;
    std::vector<double> minv(n + 1, kInf);
    std::vector<char> used(n + 1, 0);
    do {
      used[j0] = 1;
      const std::size_t i0 = p[j0];
      double delta = kInf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost[(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    // Unwind the alternating path.
    do {
      const std::size_t j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  double total = 0.0;
  for (std::size_t j = 1; j <= n; ++j)
    total += cost[(p[j] - 1) * n + (j - 1)];
  return total;
}

}  // namespace

double emd_exact(const Tensor& p, const Tensor& q) {
  if (p.rank() != 2 || q.rank() != 2 || p.cols() != q.cols())
    throw std::invalid_argument("emd_exact: need two point sets in the same space");
  if (p.rows() != q.rows())
    throw std::invalid_argument("emd_exact: equal-weight sets must have equal sizes");
  const std::size_t n = p.rows();
  if (n == 0) throw std::invalid_argument("emd_exact: empty sets");

  Tensor sq({n, n});
  kernels::pairwise_sqdist(p.data(), q.data(), sq.data(), n, n, p.cols());
  std::vector<double> cost(n * n);
  for (std::size_t i = 0; i < n * n; ++i)
    cost[i] = std::sqrt(std::max(sq[i], 0.0));
  return assignment_cost(cost, n) / static_cast<double>(n);
}

double emd_dual(const nets::LayerStack& critic_template, const Tensor& p,
                const Tensor& q, const EmdDualConfig& cfg, std::uint64_t seed) {
  if (p.rank() != 2 || q.rank() != 2 || p.cols() != q.cols())
    throw std::invalid_argument("emd_dual: need two point sets in the same space");
  if (p.rows() == 0 || q.rows() == 0)
    throw std::invalid_argument("emd_dual: empty sets");

  Rng rng(seed);
  nets::LayerStack critic = nets::LayerStack::make(critic_template.specs, rng);
  critic.zero_last_layer();

  std::vector<diffcore::AdamState> st;
  for (std::size_t i = 0; i < critic.params.size(); ++i)
    st.emplace_back(cfg.lr, cfg.beta1, cfg.beta2);

  const std::size_t bp = std::min(cfg.minibatch, p.rows());
  const std::size_t bq = std::min(cfg.minibatch, q.rows());
  auto sample = [&](const Tensor& src, std::size_t b) {
    std::vector<std::size_t> idx(b);
    for (auto& i : idx) i = rng.index(src.rows());
    return take_rows(src, idx);
  };

  for (int step = 0; step < cfg.steps; ++step) {
    Tensor xp = sample(p, bp);
    Tensor xq = sample(q, bq);
    Graph g;
    auto pv = critic.param_vars(g);
    Var dp = diffcore::mean(critic.forward(g, g.constant(xp), pv));
    Var dq = diffcore::mean(critic.forward(g, g.constant(xq), pv));
    Var gp = nets::gradient_penalty(critic, g, pv, xp, xq, rng);
    // Maximize dp - dq: minimize its negation plus the penalty.
    Var loss = diffcore::add(diffcore::sub(dq, dp),
                             diffcore::scale(gp, cfg.gp_weight));
    auto grads = g.gradients(loss, pv);
    for (std::size_t i = 0; i < critic.params.size(); ++i)
      diffcore::adam_step(st[i], critic.params[i], g.value(grads[i]));
  }

  auto mean_of = [&](const Tensor& x) {
    Tensor d = critic.forward_eval(x);
    double m = 0;
    for (std::size_t i = 0; i < d.size(); ++i) m += d[i];
    return m / static_cast<double>(d.size());
  };
  return mean_of(p) - mean_of(q);
}

EpsilonReport pii_epsilon(const CraftFn& craft_fn, const nets::LayerStack& enc,
                          const nets::LayerStack& gen, const Tensor& x_pvt,
                          const Tensor& x_pub,
                          const attacks::InversionConfig& inv_cfg,
                          std::uint64_t seed) {
  if (x_pvt.rank() != 2 || x_pvt.rows() == 0)
    throw std::invalid_argument("pii_epsilon: need a private image batch");
  if (x_pub.rank() != 2 || x_pub.rows() == 0 || x_pub.cols() != x_pvt.cols())
    throw std::invalid_argument("pii_epsilon: prior reference batch mismatch");

  const std::size_t n = x_pvt.rows();
  const std::size_t latent_dim = gen.input_width();
  Tensor features = craft_fn(x_pvt);
  if (features.rows() != n)
    throw std::invalid_argument("pii_epsilon: craft_fn changed the row count");

  // One latent pool serves both sides: the prior images are G of these
  // latents, and each inversion restart r starts from pool row block r. With
  // zero inversion iterations the two sides coincide and the distance is 0.
  Rng zrng(derive_seed(seed, 1));
  const int restarts = std::max(1, inv_cfg.restarts);
  Tensor pool = zrng.normal_tensor(
      {n * static_cast<std::size_t>(restarts), latent_dim});
  Tensor z_r({n, latent_dim});
  for (std::size_t i = 0; i < n; ++i) set_row(z_r, i, row(pool, i));
  Tensor prior_images = gen.forward_eval(z_r);

  attacks::InversionResult best;
  for (int r = 0; r < restarts; ++r) {
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = r * n + i;
    attacks::InversionResult res = attacks::invert_whitebox(
        enc, gen, features, take_rows(pool, idx), inv_cfg.iters, inv_cfg.lr);
    if (r == 0 || res.loss < best.loss) best = std::move(res);
  }

  EpsilonReport rep;
  rep.n = n;
  rep.epsilon = emd_exact(best.images, prior_images) /
                static_cast<double>(x_pvt.cols());
  return rep;
}

double ssim(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b) || a.rank() != 2 || a.rows() == 0)
    throw std::invalid_argument("ssim: need equal-shape image batches");
  constexpr double kC1 = 0.01 * 0.01;  // (K1 * L)^2 at L = 1
  constexpr double kC2 = 0.03 * 0.03;
  double total = 0.0;
  const std::size_t d = a.cols();
  for (std::size_t r = 0; r < a.rows(); ++r) {
    double ma = 0, mb = 0;
    for (std::size_t c = 0; c < d; ++c) {
      ma += a.at(r, c);
      mb += b.at(r, c);
    }
    ma /= double(d);
    mb /= double(d);
    double va = 0, vb = 0, cov = 0;
    for (std::size_t c = 0; c < d; ++c) {
      const double da = a.at(r, c) - ma;
      const double db = b.at(r, c) - mb;
      va += da * da;
      vb += db * db;
      cov += da * db;
    }
    va /= double(d);
    vb /= double(d);
    cov /= double(d);
    total += ((2 * ma * mb + kC1) * (2 * cov + kC2)) /
             ((ma * ma + mb * mb + kC1) * (va + vb + kC2));
  }
  return total / double(a.rows());
}

RecognitionReport recognition_metrics(const nets::LayerStack& id_oracle,
                                      const Tensor& reconstructed,
                                      const Tensor& originals,
                                      const std::vector<int>& true_ids) {
  if (id_oracle.empty())
    throw std::invalid_argument("recognition_metrics: oracle has no layers");
  if (!reconstructed.same_shape(originals) ||
      true_ids.size() != reconstructed.rows())
    throw std::invalid_argument("recognition_metrics: batch mismatch");

  const std::size_t n = reconstructed.rows();
  Tensor logits = id_oracle.forward_eval(reconstructed);
  std::size_t hits = 0;
  for (std::size_t r = 0; r < n; ++r) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < logits.cols(); ++c)
      if (logits.at(r, c) > logits.at(r, best)) best = c;
    if (static_cast<int>(best) == true_ids[r]) hits += 1;
  }

  const std::size_t penult = id_oracle.specs.size() - 1;
  Tensor fr = id_oracle.forward_eval_upto(reconstructed, penult);
  Tensor fo = id_oracle.forward_eval_upto(originals, penult);
  double fsim = 0.0;
  for (std::size_t r = 0; r < n; ++r) {
    double dot = 0, nr = 0, no = 0;
    for (std::size_t c = 0; c < fr.cols(); ++c) {
      dot += fr.at(r, c) * fo.at(r, c);
      nr += fr.at(r, c) * fr.at(r, c);
      no += fo.at(r, c) * fo.at(r, c);
    }
    fsim += dot / (std::sqrt(nr) * std::sqrt(no) + 1e-30);
  }

  RecognitionReport rep;
  rep.eval_acc = double(hits) / double(n);
  rep.fsim = fsim / double(n);
  return rep;
}

double utility_score(const nets::LayerStack& task_head, const Tensor& features,
                     const Tensor& labels) {
  if (features.rows() != labels.rows())
    throw std::invalid_argument("utility_score: row mismatch");
  Tensor scores = task_head.forward_eval(features);
  if (scores.cols() != labels.cols())
    throw std::invalid_argument("utility_score: attribute count mismatch");
  double total = 0.0;
  for (std::size_t a = 0; a < scores.cols(); ++a) {
    std::vector<double> s(scores.rows());
    std::vector<int> l(scores.rows());
    for (std::size_t r = 0; r < scores.rows(); ++r) {
      s[r] = scores.at(r, a);
      l[r] = labels.at(r, a) > 0.5 ? 1 : 0;
    }
    total += stats::mann_whitney_auc(s, l);  // throws on a single class
  }
  return total / double(scores.cols());
}

}  // namespace fcraft::pii
