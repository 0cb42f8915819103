#include "fcraft/crafter.hpp"

#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "fcraft/attacks.hpp"
#include "fcraft/optim.hpp"
#include "fcraft/stats.hpp"

namespace fcraft::crafter {

using diffcore::Graph;
using diffcore::Var;

namespace {

void validate(const CraftConfig& cfg) {
  if (cfg.beta < 0) throw std::invalid_argument("craft: beta must be >= 0");
  if (cfg.neumann_alpha <= 0)
    throw std::invalid_argument("craft: neumann_alpha must be > 0");
  if (cfg.outer_iters < 0 || cfg.neumann_iters < 0)
    throw std::invalid_argument("craft: iteration counts must be >= 0");
  if (cfg.n_critic < 1 || cfg.inner_iters < 1 || cfg.inner_warm_iters < 1 ||
      cfg.minibatch < 1)
    throw std::invalid_argument("craft: step counts must be positive");
  if (cfg.flr <= 0 || cfg.disc_lr <= 0 || cfg.inner_lr <= 0 || cfg.z_lr <= 0)
    throw std::invalid_argument("craft: learning rates must be positive");
}

// Inner latent solve with the divergence protocol shared by both crafting
// paths: one retry at half the learning rate, then give up.
attacks::InversionResult solve_inner(const nets::LayerStack& enc,
                                     const nets::LayerStack& gen,
                                     const Tensor& features, const Tensor& z0,
                                     int iters, double lr, int outer_iter) {
  attacks::InversionResult res =
      attacks::invert_whitebox(enc, gen, features, z0, iters, lr);
  if (!res.aborted) return res;
  res = attacks::invert_whitebox(enc, gen, features, z0, iters, 0.5 * lr);
  if (!res.aborted) return res;
  std::ostringstream msg;
  msg << "craft: latent solve diverged twice at outer iteration " << outer_iter;
  throw std::runtime_error(msg.str());
}

// Subgradient of |f - anchor| in f, zero at the anchor itself to match the
// l2norm graph op's convention.
Tensor anchor_grad(const Tensor& f, const Tensor& anchor, double* norm_out) {
  Tensor g(f.shape());
  double s = 0;
  for (std::size_t i = 0; i < f.size(); ++i) {
    g[i] = f[i] - anchor[i];
    s += g[i] * g[i];
  }
  const double nrm = std::sqrt(s);
  if (norm_out) *norm_out = nrm;
  if (nrm > 0)
    for (std::size_t i = 0; i < g.size(); ++i) g[i] /= nrm;
  else
    for (std::size_t i = 0; i < g.size(); ++i) g[i] = 0.0;
  return g;
}

double mean_of(const Tensor& t) {
  double s = 0;
  for (std::size_t i = 0; i < t.size(); ++i) s += t[i];
  return t.size() ? s / double(t.size()) : 0.0;
}

std::vector<std::size_t> draw_indices(Rng& rng, std::size_t n,
                                      std::size_t count) {
  std::vector<std::size_t> idx(count);
  for (std::size_t i = 0; i < count; ++i) idx[i] = rng.index(n);
  return idx;
}

// One critic update on minibatches of already-generated images. Keeps the
// Wasserstein sign convention used by the outer loop: the critic drives
// D(recon) down and D(prior) up, so -mean D(recon) is the privacy loss.
void critic_step(nets::LayerStack& disc,
                 std::vector<diffcore::AdamState>& st,
                 const Tensor& recon_imgs, const Tensor& prior_imgs,
                 const CraftConfig& cfg, Rng& rng_batch, Rng& rng_gp) {
  const std::size_t n = recon_imgs.rows();
  Tensor fb = take_rows(recon_imgs, draw_indices(rng_batch, n, cfg.minibatch));
  Tensor rb = take_rows(prior_imgs,
                        draw_indices(rng_batch, prior_imgs.rows(), cfg.minibatch));
  Graph g;
  auto pv = disc.param_vars(g);
  Var df = disc.forward(g, g.constant(fb), pv);
  Var dr = disc.forward(g, g.constant(rb), pv);
  Var gp = nets::gradient_penalty(disc, g, pv, rb, fb, rng_gp);
  Var loss = diffcore::add(diffcore::sub(diffcore::mean(df), diffcore::mean(dr)),
                           diffcore::scale(gp, cfg.gp_weight));
  auto grads = g.gradients(loss, pv);
  for (std::size_t i = 0; i < disc.params.size(); ++i)
    diffcore::adam_step(st[i], disc.params[i], g.value(grads[i]));
}

// Largest Hessian eigenvalue of the inner loss in z, by power iteration on
// Hessian-vector products. Used once per craft call to keep the Neumann
// step inside its convergence region.
double estimate_curvature(const diffcore::ScalarFn& inner_z, const Tensor& z,
                          std::uint64_t seed) {
  Rng rng(seed);
  Tensor u = rng.normal_tensor(z.shape());
  double lambda = 0.0;
  for (int it = 0; it < 12; ++it) {
    const double nu = l2_norm(u);
    if (nu == 0.0) return 0.0;
    for (std::size_t i = 0; i < u.size(); ++i) u[i] /= nu;
    u = diffcore::hvp(inner_z, z, u);
    lambda = l2_norm(u);
  }
  return lambda;
}

diffcore::ScalarFn2 inner_loss_fn(const nets::LayerStack& enc,
                                  const nets::LayerStack& gen) {
  return [&enc, &gen](Graph& g, Var z, Var f) {
    return diffcore::l2norm(
        diffcore::sub(f, enc.forward(g, gen.forward(g, z))));
  };
}

Tensor privacy_grad_z(const nets::LayerStack& gen, const nets::LayerStack& disc,
                      const Tensor& z_star, double* lp_out) {
  Graph g;
  Var zin = g.input(z_star);
  Var d = disc.forward(g, gen.forward(g, zin));
  Var lp = diffcore::neg(diffcore::mean(d));
  if (lp_out) *lp_out = g.value(lp)[0];
  return g.value(g.gradient(lp, zin));
}

}  // namespace

Tensor approx_inverse_hvp(const Tensor& v,
                          const std::function<Tensor(const Tensor&)>& hvp_fn,
                          double alpha, int iters) {
  if (alpha <= 0)
    throw std::invalid_argument("approx_inverse_hvp: alpha must be > 0");
  if (iters < 0)
    throw std::invalid_argument("approx_inverse_hvp: iters must be >= 0");
  Tensor term = v;
  Tensor acc = v;
  double prev_norm = l2_norm(term);
  int growing = 0;
  for (int j = 1; j <= iters; ++j) {
    Tensor hu = hvp_fn(term);
    if (!hu.same_shape(term))
      throw std::invalid_argument("approx_inverse_hvp: hvp changed the shape");
    for (std::size_t i = 0; i < term.size(); ++i) term[i] -= alpha * hu[i];
    const double nrm = l2_norm(term);
    growing = nrm > prev_norm ? growing + 1 : 0;
    prev_norm = nrm;
    if (growing >= 10)
      throw std::runtime_error(
          "approx_inverse_hvp: series terms grew for 10 consecutive steps; "
          "spectral radius of (I - alpha H) looks >= 1, reduce alpha");
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += term[i];
  }
  for (std::size_t i = 0; i < acc.size(); ++i) acc[i] *= alpha;
  return acc;
}

Tensor indirect_gradient_fn(const diffcore::ScalarFn2& inner,
                            const Tensor& z_star, const Tensor& f,
                            const Tensor& dlp_dz, double alpha, int iters,
                            double stationarity_tol,
                            std::vector<std::string>* warnings) {
  if (!dlp_dz.same_shape(z_star))
    throw std::invalid_argument(
        "indirect_gradient: dlp_dz must have z_star's shape");

  // One graph serves the whole computation: forward + first-order gradient
  // stay below the mark, every Hessian-vector product truncates back to it.
  Graph g;
  Var zv = g.input(z_star);
  Var fv = g.input(f);
  Var loss = inner(g, zv, fv);
  Var gz = g.gradient(loss, zv);

  const double gnorm = l2_norm(g.value(gz));
  if (gnorm > stationarity_tol && warnings) {
    std::ostringstream msg;
    msg << "indirect_gradient: inner gradient norm " << gnorm
        << " exceeds stationarity tolerance " << stationarity_tol
        << "; hypergradient may be off";
    warnings->push_back(msg.str());
  }

  const std::size_t mark = g.size();
  auto hvp_fn = [&](const Tensor& u) {
    g.truncate(mark);
    Var s = diffcore::dot(gz, g.constant(u));
    return g.value(g.gradient(s, zv));
  };
  Tensor v1 = approx_inverse_hvp(dlp_dz, hvp_fn, alpha, iters);

  g.truncate(mark);
  Var s = diffcore::dot(gz, g.constant(v1));
  Tensor mixed = g.value(g.gradient(s, fv));
  for (std::size_t i = 0; i < mixed.size(); ++i) mixed[i] = -mixed[i];
  return mixed;
}

Tensor indirect_gradient(const nets::LayerStack& enc,
                         const nets::LayerStack& gen,
                         const nets::LayerStack& disc, const Tensor& f_x,
                         const Tensor& z_star, const CraftConfig& cfg,
                         std::vector<std::string>* warnings) {
  Tensor dlp_dz = privacy_grad_z(gen, disc, z_star, nullptr);
  return indirect_gradient_fn(inner_loss_fn(enc, gen), z_star, f_x, dlp_dz,
                              cfg.neumann_alpha, cfg.neumann_iters,
                              cfg.stationarity_tol, warnings);
}

double inner_curvature(const nets::LayerStack& enc, const nets::LayerStack& gen,
                       const Tensor& f, const Tensor& z, std::uint64_t seed) {
  diffcore::ScalarFn inner_z = [&enc, &gen, &f](Graph& g, Var zv) {
    return diffcore::l2norm(
        diffcore::sub(g.constant(f), enc.forward(g, gen.forward(g, zv))));
  };
  return estimate_curvature(inner_z, z, seed);
}

CraftOutput craft(const nets::LayerStack& enc, const nets::LayerStack& gen,
                  const nets::LayerStack& disc_template, const Tensor& x,
                  const CraftConfig& cfg) {
  validate(cfg);
  const std::size_t n = x.rows();
  if (n < 2 * cfg.minibatch)
    throw std::invalid_argument(
        "craft: batch must have at least 2*minibatch rows");
  if (x.cols() != enc.input_width())
    throw std::invalid_argument("craft: image width does not match encoder");

  CraftOutput out;
  Rng rng_disc(derive_seed(cfg.seed, 10));
  out.disc = nets::LayerStack::make(disc_template.specs, rng_disc);
  const Tensor enc_x = enc.forward_eval(x);
  out.features = enc_x;
  out.z_star = Tensor({0, 0});
  if (cfg.outer_iters == 0) return out;

  const std::size_t latent = gen.input_width();
  Rng rng_prior(derive_seed(cfg.seed, 2));
  const Tensor z_r = rng_prior.normal_tensor({n, latent});
  const Tensor prior_imgs = gen.forward_eval(z_r);
  Rng rng_cold(derive_seed(cfg.seed, 3));
  Tensor z_cur = rng_cold.normal_tensor({n, latent});
  Rng rng_batch(derive_seed(cfg.seed, 4));
  Rng rng_gp(derive_seed(cfg.seed, 6));

  std::vector<diffcore::AdamState> disc_st(
      out.disc.params.size(), diffcore::AdamState(cfg.disc_lr, 0.5, 0.9));
  diffcore::AdamState f_st(cfg.flr);

  CraftConfig run_cfg = cfg;  // neumann_alpha may be capped below
  for (int t = 0; t < cfg.outer_iters; ++t) {
    const int budget = t == 0 ? cfg.inner_iters : cfg.inner_warm_iters;
    attacks::InversionResult res =
        solve_inner(enc, gen, out.features, z_cur, budget, cfg.inner_lr, t);
    out.z_star = res.latents;
    z_cur = res.latents;

    if (t == 0) {
      // The inner loss is an unsquared norm, so its curvature steepens as
      // the residual shrinks; cap the Neumann step to the measured top
      // eigenvalue instead of trusting the configured alpha blindly.
      const double lam = inner_curvature(enc, gen, out.features, z_cur,
                                         derive_seed(cfg.seed, 5));
      if (lam > 0 && 0.9 / lam < cfg.neumann_alpha) {
        run_cfg.neumann_alpha = 0.9 / lam;
        std::ostringstream msg;
        msg << "craft: neumann alpha capped at " << run_cfg.neumann_alpha
            << " (top inner curvature about " << lam << ")";
        out.warnings.push_back(msg.str());
      }
    }

    const Tensor recon_imgs = gen.forward_eval(z_cur);
    for (int k = 0; k < cfg.n_critic; ++k)
      critic_step(out.disc, disc_st, recon_imgs, prior_imgs, cfg, rng_batch,
                  rng_gp);

    const double lp = -mean_of(out.disc.forward_eval(recon_imgs));
    double lu = 0.0;
    Tensor g_u = anchor_grad(out.features, enc_x, &lu);
    out.trajectory.emplace_back(lp, lu);

    Tensor hyper = indirect_gradient(enc, gen, out.disc, out.features, z_cur,
                                     run_cfg, &out.warnings);
    for (std::size_t i = 0; i < hyper.size(); ++i)
      hyper[i] += cfg.beta * g_u[i];
    diffcore::adam_step(f_st, out.features, hyper);
  }
  return out;
}

CraftOutput craft_z(const nets::LayerStack& enc, const nets::LayerStack& gen,
                    const nets::LayerStack& disc_template, const Tensor& x,
                    const CraftConfig& cfg) {
  validate(cfg);
  const std::size_t n = x.rows();
  if (n < 2 * cfg.minibatch)
    throw std::invalid_argument(
        "craft_z: batch must have at least 2*minibatch rows");
  if (x.cols() != enc.input_width())
    throw std::invalid_argument("craft_z: image width does not match encoder");

  CraftOutput out;
  Rng rng_disc(derive_seed(cfg.seed, 10));
  out.disc = nets::LayerStack::make(disc_template.specs, rng_disc);
  const Tensor enc_x = enc.forward_eval(x);
  const std::size_t latent = gen.input_width();

  Rng rng_cold(derive_seed(cfg.seed, 3));
  Tensor z0 = rng_cold.normal_tensor({n, latent});
  attacks::InversionResult init =
      solve_inner(enc, gen, enc_x, z0, cfg.inner_iters, cfg.inner_lr, 0);
  Tensor z = init.latents;
  out.z_star = z;
  out.features = enc.forward_eval(gen.forward_eval(z));
  if (cfg.outer_iters == 0) return out;

  Rng rng_prior(derive_seed(cfg.seed, 2));
  const Tensor z_r = rng_prior.normal_tensor({n, latent});
  const Tensor prior_imgs = gen.forward_eval(z_r);
  Rng rng_batch(derive_seed(cfg.seed, 4));
  Rng rng_gp(derive_seed(cfg.seed, 6));

  std::vector<diffcore::AdamState> disc_st(
      out.disc.params.size(), diffcore::AdamState(cfg.disc_lr, 0.5, 0.9));
  diffcore::AdamState z_st(cfg.z_lr);

  for (int t = 0; t < cfg.outer_iters; ++t) {
    const Tensor recon_imgs = gen.forward_eval(z);
    for (int k = 0; k < cfg.n_critic; ++k)
      critic_step(out.disc, disc_st, recon_imgs, prior_imgs, cfg, rng_batch,
                  rng_gp);

    const double lp = -mean_of(out.disc.forward_eval(recon_imgs));

    // Direct gradient in z: both losses flow through G, no implicit step.
    Graph g;
    Var zin = g.input(z);
    Var imgs = gen.forward(g, zin);
    Var feats = enc.forward(g, imgs);
    Var l_u = diffcore::l2norm(diffcore::sub(feats, g.constant(enc_x)));
    Var d = out.disc.forward(g, imgs);
    Var l_p = diffcore::neg(diffcore::mean(d));
    Var total = diffcore::add(l_p, diffcore::scale(l_u, cfg.beta));
    Tensor gz = g.value(g.gradient(total, zin));
    out.trajectory.emplace_back(lp, g.value(l_u)[0]);
    diffcore::adam_step(z_st, z, gz);
  }

  out.z_star = z;
  out.features = enc.forward_eval(gen.forward_eval(z));
  return out;
}

Tensor ShuffleDefense::protect(const Tensor& x) {
  const std::size_t n = x.rows();
  if (n == 0) throw std::invalid_argument("shuffle_defense: empty batch");

  const std::size_t r = n, c = x.cols();
  std::uint64_t h = stats::hash_bytes(&r, sizeof(r));
  h = stats::hash_bytes(&c, sizeof(c), h);
  h = stats::hash_bytes(x.data(), x.size() * sizeof(double), h);
  const bool cacheable = n < cache_threshold_;
  if (cacheable) {
    auto it = cache_.find(h);
    if (it != cache_.end()) {
      hits_ += 1;
      return it->second;
    }
  }

  perm_.resize(n);
  std::iota(perm_.begin(), perm_.end(), std::size_t{0});
  rng_.shuffle(perm_);
  Tensor wire = take_rows(x, perm_);
  Tensor wire_feats = craft_fn_(wire);
  if (wire_feats.rows() != n)
    throw std::runtime_error("shuffle_defense: crafting changed the row count");

  Tensor out({n, wire_feats.cols()});
  for (std::size_t i = 0; i < n; ++i)
    set_row(out, perm_[i], row(wire_feats, i));
  if (cacheable) cache_.emplace(h, out);
  return out;
}

}  // namespace fcraft::crafter
