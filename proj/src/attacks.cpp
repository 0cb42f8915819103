#include "fcraft/attacks.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "fcraft/graph.hpp"
#include "fcraft/optim.hpp"
#include "fcraft/rng.hpp"

namespace fcraft::attacks {

using diffcore::Graph;
using diffcore::Var;

namespace {

double frob_dist(const Tensor& a, const Tensor& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return std::sqrt(s);
}

double frob_norm(const Tensor& a) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * a[i];
  return std::sqrt(s);
}

}  // namespace

nets::TrainReport train_blackbox_decoder(EncoderOracle& enc,
                                         nets::LayerStack& dec,
                                         const Tensor& x_pub,
                                         const DecoderTrainConfig& cfg,
                                         std::uint64_t seed) {
  nets::TrainReport rep;
  const std::size_t n = x_pub.rows();
  if (n < 2)
    throw std::invalid_argument("train_blackbox_decoder: need public images");

  // One oracle query covers the whole training set; the encoder is
  // deterministic, so per-epoch re-queries would only inflate the count.
  Tensor features = enc.query(x_pub);

  Rng rng(seed);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  rng.shuffle(order);
  const std::size_t n_hold =
      std::min(n - 1, static_cast<std::size_t>(
                          std::llround(cfg.holdout_fraction * double(n))));
  std::vector<std::size_t> hold(order.begin(), order.begin() + n_hold);
  std::vector<std::size_t> train(order.begin() + n_hold, order.end());

  const std::size_t b = std::min(cfg.minibatch, train.size());
  std::vector<diffcore::AdamState> st(dec.params.size(),
                                      diffcore::AdamState(cfg.lr));

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(train);
    double epoch_loss = 0;
    std::size_t nb = 0;
    for (std::size_t at = 0; at + b <= train.size(); at += b) {
      std::vector<std::size_t> batch(train.begin() + at, train.begin() + at + b);
      Tensor fb = take_rows(features, batch);
      Tensor xb = take_rows(x_pub, batch);
      Graph g;
      auto pv = dec.param_vars(g);
      Var out = dec.forward(g, g.constant(fb), pv);
      Var loss = diffcore::l2norm(diffcore::sub(out, g.constant(xb)));
      auto grads = g.gradients(loss, pv);
      for (std::size_t i = 0; i < dec.params.size(); ++i)
        diffcore::adam_step(st[i], dec.params[i], g.value(grads[i]));
      epoch_loss += g.value(loss)[0];
      nb += 1;
      rep.steps += 1;
    }
    rep.final_loss = nb ? epoch_loss / double(nb) : 0.0;
    rep.loss_curve.push_back(rep.final_loss);
  }

  const auto& eval_idx = hold.empty() ? train : hold;
  Tensor xe = take_rows(x_pub, eval_idx);
  Tensor re = dec.forward_eval(take_rows(features, eval_idx));
  rep.final_metric = frob_dist(re, xe) / (frob_norm(xe) + 1e-30);
  rep.degenerate = rep.final_metric > cfg.rel_err_threshold;
  return rep;
}

namespace {

// Shared monotone-descent driver for the latent and pixel inversions: Adam
// proposals, rollback plus step halving on any loss increase. loss_fn must be
// the plain (graph-free) evaluation so accept decisions compare like against
// like; grad_fn supplies the gradient at the current point.
template <class LossFn, class GradFn>
InversionResult descend(Tensor param, int iters, double lr, LossFn&& loss_fn,
                        GradFn&& grad_fn) {
  InversionResult res;
  diffcore::AdamState st(lr);
  double cur = loss_fn(param);
  try {
    for (int it = 0; it < iters; ++it) {
      if (cur <= 1e-14) break;  // already at a solution
      Tensor grad = grad_fn(param);
      Tensor backup_param = param;
      diffcore::AdamState backup_st = st;
      diffcore::adam_step(st, param, grad);
      const double prop = loss_fn(param);
      if (prop <= cur) {
        cur = prop;
        res.iters_used = it + 1;
      } else {
        param = std::move(backup_param);
        st = std::move(backup_st);
        st.lr *= 0.5;
        if (st.lr < 1e-12) break;  // step size exhausted
      }
    }
  } catch (const diffcore::NumericError&) {
    res.aborted = true;
  }
  res.latents = std::move(param);
  res.loss = cur;
  return res;
}

}  // namespace

InversionResult invert_whitebox(const nets::LayerStack& enc,
                                const nets::LayerStack& gen,
                                const Tensor& target_features, const Tensor& z0,
                                int iters, double lr) {
  if (target_features.cols() != enc.output_width())
    throw std::invalid_argument("invert_whitebox: feature width mismatch");
  if (z0.rows() != target_features.rows() || z0.cols() != gen.input_width())
    throw std::invalid_argument("invert_whitebox: latent batch mismatch");

  auto loss_fn = [&](const Tensor& z) {
    return frob_dist(enc.forward_eval(gen.forward_eval(z)), target_features);
  };
  auto grad_fn = [&](const Tensor& z) {
    Graph g;
    Var zv = g.input(z);
    Var f = enc.forward(g, gen.forward(g, zv));
    Var loss = diffcore::l2norm(diffcore::sub(f, g.constant(target_features)));
    return g.value(g.gradient(loss, zv));
  };

  InversionResult res = descend(z0, iters, lr, loss_fn, grad_fn);
  res.images = gen.forward_eval(res.latents);
  return res;
}

InversionResult invert_whitebox_restarts(const nets::LayerStack& enc,
                                         const nets::LayerStack& gen,
                                         const Tensor& target_features,
                                         const InversionConfig& cfg,
                                         std::uint64_t seed) {
  const int restarts = std::max(1, cfg.restarts);
  InversionResult best;
  for (int r = 0; r < restarts; ++r) {
    Rng rng(derive_seed(seed, 300 + static_cast<std::uint64_t>(r)));
    Tensor z0 = rng.normal_tensor({target_features.rows(), gen.input_width()});
    InversionResult res =
        invert_whitebox(enc, gen, target_features, z0, cfg.iters, cfg.lr);
    if (r == 0 || res.loss < best.loss) best = std::move(res);
  }
  return best;
}

InversionResult attack_hybrid(const nets::LayerStack& enc,
                              const nets::LayerStack& dec,
                              const Tensor& target_features,
                              const HybridConfig& cfg) {
  if (target_features.cols() != dec.input_width())
    throw std::invalid_argument("attack_hybrid: decoder width mismatch");
  Tensor x0 = dec.forward_eval(target_features);

  auto loss_fn = [&](const Tensor& x) {
    return frob_dist(enc.forward_eval(x), target_features);
  };
  auto grad_fn = [&](const Tensor& x) {
    Graph g;
    Var xv = g.input(x);
    Var loss = diffcore::l2norm(diffcore::sub(
        enc.forward(g, xv), g.constant(target_features)));
    return g.value(g.gradient(loss, xv));
  };

  InversionResult res = descend(std::move(x0), cfg.iters, cfg.lr, loss_fn, grad_fn);
  res.images = std::move(res.latents);
  res.latents = Tensor({0, 0});
  return res;
}

A1Report adapt_a1(A1Kind kind, const nets::LayerStack& enc,
                  nets::LayerStack& model, const CraftOracle& craft_oracle,
                  const Tensor& x_adv, const A1Config& cfg, std::uint64_t seed,
                  const A1Hook& hook) {
  A1Report rep;
  const std::size_t n = x_adv.rows();
  if (n == 0) throw std::invalid_argument("adapt_a1: empty attacker set");

  // The defense is queried exactly once; adaptation then grinds against the
  // fixed protected features, which is where the poisoning effect bites.
  Tensor features = craft_oracle(x_adv);
  rep.oracle_queries = 1;
  if (features.rows() != n)
    throw std::runtime_error("adapt_a1: oracle changed the row count");

  Rng rng(seed);
  const std::size_t b = std::min(cfg.minibatch, n);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);

  auto solve_latents = [&](std::uint64_t stream) {
    Rng zr(derive_seed(seed, stream));
    Tensor z0 = zr.normal_tensor({n, model.input_width()});
    return invert_whitebox(enc, model, features, z0, cfg.inv_iters, cfg.inv_lr)
        .latents;
  };

  if (kind == A1Kind::kBlack) {
    std::vector<diffcore::AdamState> st(model.params.size(),
                                        diffcore::AdamState(cfg.lr));
    rep.epoch_loss.push_back(frob_dist(model.forward_eval(features), x_adv));
    if (hook) hook(0, rep.epoch_loss.back(), model);
    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
      rng.shuffle(order);
      for (std::size_t at = 0; at + b <= n; at += b) {
        std::vector<std::size_t> batch(order.begin() + at, order.begin() + at + b);
        Graph g;
        auto pv = model.param_vars(g);
        Var out = model.forward(g, g.constant(take_rows(features, batch)), pv);
        Var loss = diffcore::l2norm(
            diffcore::sub(out, g.constant(take_rows(x_adv, batch))));
        auto grads = g.gradients(loss, pv);
        for (std::size_t i = 0; i < model.params.size(); ++i)
          diffcore::adam_step(st[i], model.params[i], g.value(grads[i]));
      }
      rep.epoch_loss.push_back(frob_dist(model.forward_eval(features), x_adv));
      if (hook) hook(epoch, rep.epoch_loss.back(), model);
    }
    return rep;
  }

  // White variant: generator updates through the re-solved best response.
  std::vector<diffcore::RmsPropState> st(model.params.size(),
                                         diffcore::RmsPropState(cfg.lr));
  Tensor z_star = solve_latents(400);
  rep.epoch_loss.push_back(frob_dist(model.forward_eval(z_star), x_adv));
  if (hook) hook(0, rep.epoch_loss.back(), model);
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    // Cold re-solve against the current generator; warm starts would let the
    // attacker coast on stale latents.
    z_star = solve_latents(400 + static_cast<std::uint64_t>(epoch));
    rng.shuffle(order);
    for (std::size_t at = 0; at + b <= n; at += b) {
      std::vector<std::size_t> batch(order.begin() + at, order.begin() + at + b);
      Graph g;
      auto pv = model.param_vars(g);
      Var out = model.forward(g, g.constant(take_rows(z_star, batch)), pv);
      Var loss = diffcore::l2norm(
          diffcore::sub(out, g.constant(take_rows(x_adv, batch))));
      auto grads = g.gradients(loss, pv);
      for (std::size_t i = 0; i < model.params.size(); ++i)
        diffcore::rmsprop_step(st[i], model.params[i], g.value(grads[i]));
    }
    rep.epoch_loss.push_back(frob_dist(model.forward_eval(z_star), x_adv));
    if (hook) hook(epoch, rep.epoch_loss.back(), model);
  }
  return rep;
}

Tensor attack_a3_average(const CraftOracle& craft_oracle, const Tensor& x,
                         int k) {
  if (k < 1) throw std::invalid_argument("attack_a3_average: k must be >= 1");
  Tensor acc = craft_oracle(x);
  for (int i = 1; i < k; ++i) {
    Tensor next = craft_oracle(x);
    if (!next.same_shape(acc))
      throw std::runtime_error("attack_a3_average: oracle response shape changed");
    for (std::size_t j = 0; j < acc.size(); ++j) acc[j] += next[j];
  }
  for (std::size_t j = 0; j < acc.size(); ++j) acc[j] /= double(k);
  return acc;
}

}  // namespace fcraft::attacks
