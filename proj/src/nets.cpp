#include "fcraft/nets.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>

#include "fcraft/kernels.hpp"
#include "fcraft/optim.hpp"
#include "fcraft/pii.hpp"
#include "fcraft/stats.hpp"

namespace fcraft::nets {

using diffcore::Graph;
using diffcore::Var;

namespace {

constexpr double kLeakySlope = 0.2;

double apply_act_scalar(double v, Act a) {
  switch (a) {
    case Act::kNone: return v;
    case Act::kTanh: return std::tanh(v);
    case Act::kSoftplus:
      return std::max(v, 0.0) + std::log1p(std::exp(-std::fabs(v)));
    case Act::kSigmoid:
      return v >= 0 ? 1.0 / (1.0 + std::exp(-v))
                    : std::exp(v) / (1.0 + std::exp(v));
    case Act::kRelu: return v > 0 ? v : 0.0;
    case Act::kLeakyRelu: return v > 0 ? v : kLeakySlope * v;
  }
  return v;
}

Var apply_act(Var x, Act a) {
  switch (a) {
    case Act::kNone: return x;
    case Act::kTanh: return diffcore::tanh(x);
    case Act::kSoftplus: return diffcore::softplus(x);
    case Act::kSigmoid: return diffcore::sigmoid(x);
    case Act::kRelu: return diffcore::relu(x);
    case Act::kLeakyRelu: return diffcore::leaky_relu(x, kLeakySlope);
  }
  return x;
}

// Per-parameter Adam bookkeeping for one stack.
struct StackOptimizer {
  std::vector<diffcore::AdamState> st;
  StackOptimizer(const LayerStack& s, double lr, double b1 = 0.9,
                 double b2 = 0.999) {
    st.reserve(s.params.size());
    for (std::size_t i = 0; i < s.params.size(); ++i)
      st.emplace_back(lr, b1, b2);
  }
  void step(LayerStack& s, Graph& g, const std::vector<Var>& grads) {
    for (std::size_t i = 0; i < s.params.size(); ++i)
      diffcore::adam_step(st[i], s.params[i], g.value(grads[i]));
  }
};

// mean over all entries of softplus(z) - z*y, the logit Bernoulli loss.
Var bce_with_logits(Graph& g, Var logits, const Tensor& y) {
  Var yc = g.constant(y);
  return diffcore::mean(
      diffcore::sub(diffcore::softplus(logits), diffcore::mul(logits, yc)));
}

// Numerically stable multi-class cross entropy against one-hot rows.
Var ce_with_logits(Graph& g, Var logits, const Tensor& onehot) {
  const Tensor& z = g.value(logits);
  Tensor neg_rowmax({z.rows()});
  for (std::size_t r = 0; r < z.rows(); ++r) {
    double m = z.at(r, 0);
    for (std::size_t c = 1; c < z.cols(); ++c) m = std::max(m, z.at(r, c));
    neg_rowmax[r] = -m;
  }
  Var shifted = diffcore::add_col_vec(logits, g.constant(neg_rowmax));
  Var lse = diffcore::sub(diffcore::log(diffcore::row_sum(diffcore::exp(shifted))),
                          g.constant(neg_rowmax));
  Var zy = diffcore::row_sum(diffcore::mul(logits, g.constant(onehot)));
  return diffcore::mean(diffcore::sub(lse, zy));
}

std::vector<std::size_t> argmax_rows(const Tensor& logits) {
  std::vector<std::size_t> out(logits.rows());
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < logits.cols(); ++c)
      if (logits.at(r, c) > logits.at(r, best)) best = c;
    out[r] = best;
  }
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// LayerStack.

LayerStack LayerStack::make(std::vector<LayerSpec> layer_specs, Rng& rng) {
  LayerStack s;
  s.specs = std::move(layer_specs);
  for (std::size_t i = 0; i + 1 < s.specs.size(); ++i) {
    if (s.specs[i].out != s.specs[i + 1].in)
      throw std::invalid_argument("LayerStack: widths do not chain");
  }
  for (const auto& spec : s.specs) {
    const double bound =
        std::sqrt(6.0 / static_cast<double>(spec.in + spec.out));
    s.params.push_back(rng.uniform_tensor({spec.in, spec.out}, -bound, bound));
    s.params.push_back(Tensor({spec.out}));
  }
  return s;
}

void LayerStack::zero_last_layer() {
  if (specs.empty()) return;
  Tensor& w = params[2 * (specs.size() - 1)];
  Tensor& b = params[2 * (specs.size() - 1) + 1];
  w = Tensor::zeros_like(w);
  b = Tensor::zeros_like(b);
}

std::vector<Var> LayerStack::param_vars(Graph& g) const {
  std::vector<Var> pv;
  pv.reserve(params.size());
  for (const Tensor& p : params) pv.push_back(g.input(p));
  return pv;
}

Var LayerStack::forward(Graph& g, Var x) const {
  Var cur = x;
  for (std::size_t i = 0; i < specs.size(); ++i) {
    Var z = diffcore::add_row_vec(
        diffcore::matmul(cur, g.constant(params[2 * i])),
        g.constant(params[2 * i + 1]));
    cur = apply_act(z, specs[i].act);
  }
  return cur;
}

Var LayerStack::forward(Graph&, Var x,
                        std::span<const Var> param_vars) const {
  if (param_vars.size() != params.size())
    throw std::invalid_argument("LayerStack::forward: wrong param var count");
  Var cur = x;
  for (std::size_t i = 0; i < specs.size(); ++i) {
    Var z = diffcore::add_row_vec(diffcore::matmul(cur, param_vars[2 * i]),
                                  param_vars[2 * i + 1]);
    cur = apply_act(z, specs[i].act);
  }
  return cur;
}

Tensor LayerStack::forward_eval(const Tensor& x) const {
  return forward_eval_upto(x, specs.size());
}

Tensor LayerStack::forward_eval_upto(const Tensor& x, std::size_t layers) const {
  if (layers > specs.size())
    throw std::invalid_argument("forward_eval_upto: too many layers");
  Tensor cur = x;
  for (std::size_t i = 0; i < layers; ++i) {
    const Tensor& w = params[2 * i];
    const Tensor& b = params[2 * i + 1];
    if (cur.cols() != w.rows())
      throw std::invalid_argument("forward_eval: width mismatch at layer " +
                                  std::to_string(i));
    Tensor next({cur.rows(), w.cols()});
    kernels::matmul(cur.data(), w.data(), next.data(), cur.rows(), w.rows(),
                    w.cols(), false, false);
    for (std::size_t r = 0; r < next.rows(); ++r)
      for (std::size_t c = 0; c < next.cols(); ++c)
        next.at(r, c) = apply_act_scalar(next.at(r, c) + b[c], specs[i].act);
    cur = std::move(next);
  }
  return cur;
}

std::uint64_t LayerStack::checksum() const {
  std::uint64_t h = stats::hash_bytes(nullptr, 0);
  for (const auto& spec : specs) {
    const std::uint64_t meta[3] = {spec.in, spec.out,
                                   static_cast<std::uint64_t>(spec.act)};
    h = stats::hash_bytes(meta, sizeof meta, h);
  }
  for (const Tensor& p : params)
    h = stats::hash_bytes(p.data(), p.size() * sizeof(double), h);
  return h;
}

// ---------------------------------------------------------------------------
// Default architectures.

LayerStack make_encoder(const ArchConfig& a, Rng& rng) {
  return LayerStack::make({{a.image_dim, a.enc_hidden, Act::kTanh},
                           {a.enc_hidden, a.feature_dim, Act::kNone}},
                          rng);
}

LayerStack make_task_head(const ArchConfig& a, Rng& rng) {
  return LayerStack::make(
      {{a.feature_dim, 16, Act::kTanh}, {16, a.n_attrs, Act::kNone}}, rng);
}

LayerStack make_generator(const ArchConfig& a, Rng& rng) {
  return LayerStack::make({{a.latent_dim, a.gen_hidden, Act::kTanh},
                           {a.gen_hidden, a.image_dim, Act::kSigmoid}},
                          rng);
}

LayerStack make_generator_alt(const ArchConfig& a, Rng& rng) {
  const std::size_t half = std::max<std::size_t>(2, a.latent_dim / 2);
  return LayerStack::make({{half, a.gen_hidden * 3 / 4, Act::kTanh},
                           {a.gen_hidden * 3 / 4, a.image_dim, Act::kSigmoid}},
                          rng);
}

LayerStack make_discriminator(const ArchConfig& a, Rng& rng) {
  return LayerStack::make({{a.image_dim, 64, Act::kLeakyRelu},
                           {64, 32, Act::kLeakyRelu},
                           {32, 1, Act::kNone}},
                          rng);
}

LayerStack make_decoder(const ArchConfig& a, Rng& rng) {
  return LayerStack::make({{a.feature_dim, a.gen_hidden, Act::kLeakyRelu},
                           {a.gen_hidden, a.image_dim, Act::kSigmoid}},
                          rng);
}

LayerStack make_amortizer(const ArchConfig& a, Rng& rng) {
  return LayerStack::make(
      {{a.feature_dim, 64, Act::kTanh}, {64, a.latent_dim, Act::kNone}}, rng);
}

LayerStack make_id_oracle(const ArchConfig& a, Rng& rng) {
  return LayerStack::make(
      {{a.image_dim, 64, Act::kTanh}, {64, a.n_ids, Act::kNone}}, rng);
}

// ---------------------------------------------------------------------------
// Gradient penalty.

Var gradient_penalty(const LayerStack& disc, Graph& g,
                     std::span<const Var> disc_pv, const Tensor& x1,
                     const Tensor& x2, Rng& rng) {
  if (!x1.same_shape(x2) || x1.rank() != 2)
    throw std::invalid_argument("gradient_penalty: batches must match, rank 2");
  Tensor xh(x1.shape());
  for (std::size_t r = 0; r < x1.rows(); ++r) {
    const double eps = rng.uniform();
    for (std::size_t c = 0; c < x1.cols(); ++c)
      xh.at(r, c) = eps * x1.at(r, c) + (1.0 - eps) * x2.at(r, c);
  }
  Var xhat = g.input(std::move(xh));
  Var u = disc.forward(g, xhat, disc_pv);
  Var gx = g.gradient(diffcore::sum(u), xhat);
  // Rows are independent, so the batch gradient holds each sample's gradient.
  Var sq = diffcore::row_sum(diffcore::mul(gx, gx));
  Var rn = diffcore::sqrt(diffcore::add_scalar(sq, 1e-12));
  Var t = diffcore::add_scalar(rn, -1.0);
  return diffcore::mean(diffcore::mul(t, t));
}

double gradient_penalty_value(const LayerStack& disc, const Tensor& x1,
                              const Tensor& x2, Rng& rng) {
  Graph g;
  auto pv = disc.param_vars(g);
  return g.value(gradient_penalty(disc, g, pv, x1, x2, rng))[0];
}

// ---------------------------------------------------------------------------
// WGAN pretraining.

TrainReport wgan_pretrain(LayerStack& gen, LayerStack& disc, const Tensor& x_pub,
                          std::size_t latent_dim, const WganConfig& cfg,
                          std::uint64_t seed) {
  TrainReport rep;
  if (cfg.gen_steps <= 0) return rep;
  Rng rng(seed);
  const std::size_t n = x_pub.rows();
  const std::size_t b = std::min<std::size_t>(cfg.minibatch, n);

  StackOptimizer opt_d(disc, cfg.lr, cfg.beta1, cfg.beta2);
  StackOptimizer opt_g(gen, cfg.lr, cfg.beta1, cfg.beta2);

  auto real_batch = [&] {
    std::vector<std::size_t> idx(b);
    for (auto& i : idx) i = rng.index(n);
    return take_rows(x_pub, idx);
  };

  try {
    for (int step = 0; step < cfg.gen_steps; ++step) {
      for (int c = 0; c < cfg.n_critic; ++c) {
        Tensor xr = real_batch();
        Tensor xf = gen.forward_eval(rng.normal_tensor({b, latent_dim}));
        Graph g;
        auto pv = disc.param_vars(g);
        Var fr = disc.forward(g, g.constant(xr), pv);
        Var ff = disc.forward(g, g.constant(xf), pv);
        Var gp = gradient_penalty(disc, g, pv, xr, xf, rng);
        Var loss = diffcore::add(diffcore::sub(diffcore::mean(ff), diffcore::mean(fr)),
                                 diffcore::scale(gp, cfg.gp_weight));
        auto grads = g.gradients(loss, pv);
        opt_d.step(disc, g, grads);
        rep.disc_updates += 1;
        rep.final_loss = g.value(loss)[0];
      }
      Tensor z = rng.normal_tensor({b, latent_dim});
      Graph g;
      auto pv = gen.param_vars(g);
      Var fake = gen.forward(g, g.constant(z), pv);
      Var loss = diffcore::neg(diffcore::mean(disc.forward(g, fake)));
      auto grads = g.gradients(loss, pv);
      opt_g.step(gen, g, grads);
      rep.gen_updates += 1;
      rep.steps += 1;
      rep.final_loss = g.value(loss)[0];
      rep.loss_curve.push_back(rep.final_loss);
    }
  } catch (const diffcore::NumericError&) {
    rep.diverged = true;
    return rep;
  }

  if (cfg.dual_eval_steps > 0) {
    const std::size_t ns = std::min<std::size_t>(n, 256);
    Tensor samples = gen.forward_eval(rng.normal_tensor({ns, latent_dim}));
    pii::EmdDualConfig dc;
    dc.steps = cfg.dual_eval_steps;
    dc.gp_weight = cfg.gp_weight;
    rep.final_metric =
        pii::emd_dual(disc, x_pub, samples, dc, derive_seed(seed, 78));
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Task model.

namespace {

double auc_of(const LayerStack& enc, const LayerStack& head, const Tensor& x,
              const Tensor& y, const std::vector<std::size_t>& idx) {
  if (idx.empty()) return 0.5;
  Tensor xs = take_rows(x, idx);
  Tensor scores = head.forward_eval(enc.empty() ? xs : enc.forward_eval(xs));
  double total = 0;
  std::size_t attrs = 0;
  for (std::size_t a = 0; a < scores.cols(); ++a) {
    std::vector<double> s(idx.size());
    std::vector<int> l(idx.size());
    for (std::size_t i = 0; i < idx.size(); ++i) {
      s[i] = scores.at(i, a);
      l[i] = y.at(idx[i], a) > 0.5 ? 1 : 0;
    }
    bool has0 = false, has1 = false;
    for (int li : l) (li ? has1 : has0) = true;
    if (!has0 || !has1) continue;  // degenerate column, skip
    total += stats::mann_whitney_auc(s, l);
    attrs += 1;
  }
  return attrs ? total / static_cast<double>(attrs) : 0.5;
}

TrainReport train_task_common(LayerStack* enc, LayerStack& head,
                              const Tensor& x, const Tensor& y,
                              const TaskTrainConfig& cfg, std::uint64_t seed) {
  TrainReport rep;
  const std::size_t n = x.rows();
  if (y.rows() != n)
    throw std::invalid_argument("train_task_model: label count mismatch");
  Rng rng(seed);

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  rng.shuffle(order);
  const std::size_t n_hold =
      std::min(n - 1, static_cast<std::size_t>(
                          std::llround(cfg.holdout_fraction * double(n))));
  std::vector<std::size_t> hold(order.begin(), order.begin() + n_hold);
  std::vector<std::size_t> train(order.begin() + n_hold, order.end());

  const std::size_t b = std::min<std::size_t>(cfg.minibatch, train.size());
  StackOptimizer opt_h(head, cfg.lr);
  StackOptimizer opt_e(enc ? *enc : head, cfg.lr);  // unused when enc == null

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(train);
    double epoch_loss = 0;
    std::size_t nb = 0;
    for (std::size_t at = 0; at + b <= train.size(); at += b) {
      std::vector<std::size_t> batch(train.begin() + at, train.begin() + at + b);
      Tensor xb = take_rows(x, batch);
      Tensor yb = take_rows(y, batch);
      Graph g;
      std::vector<Var> pv_e, pv_h;
      Var feats{};
      if (enc) {
        pv_e = enc->param_vars(g);
        feats = enc->forward(g, g.constant(xb), pv_e);
      } else {
        feats = g.constant(xb);
      }
      pv_h = head.param_vars(g);
      Var logits = head.forward(g, feats, pv_h);
      Var loss = bce_with_logits(g, logits, yb);
      std::vector<Var> all = pv_e;
      all.insert(all.end(), pv_h.begin(), pv_h.end());
      auto grads = g.gradients(loss, all);
      if (enc) {
        std::vector<Var> ge(grads.begin(), grads.begin() + pv_e.size());
        opt_e.step(*enc, g, ge);
      }
      std::vector<Var> gh(grads.begin() + pv_e.size(), grads.end());
      opt_h.step(head, g, gh);
      epoch_loss += g.value(loss)[0];
      nb += 1;
      rep.steps += 1;
    }
    rep.final_loss = nb ? epoch_loss / double(nb) : 0.0;
    rep.loss_curve.push_back(rep.final_loss);
  }

  LayerStack empty;
  rep.final_metric =
      auc_of(enc ? *enc : empty, head, x, y, hold.empty() ? train : hold);
  rep.degenerate = rep.final_metric < cfg.auc_threshold;
  return rep;
}

}  // namespace

TrainReport train_task_model(LayerStack& enc, LayerStack& head, const Tensor& x,
                             const Tensor& y, const TaskTrainConfig& cfg,
                             std::uint64_t seed) {
  return train_task_common(&enc, head, x, y, cfg, seed);
}

TrainReport train_task_head(LayerStack& head, const Tensor& features,
                            const Tensor& y, const TaskTrainConfig& cfg,
                            std::uint64_t seed) {
  return train_task_common(nullptr, head, features, y, cfg, seed);
}

// ---------------------------------------------------------------------------
// Identity oracle.

TrainReport train_identity_oracle(LayerStack& oracle, const Tensor& x,
                                  const std::vector<int>& ids,
                                  const OracleTrainConfig& cfg,
                                  std::uint64_t seed) {
  TrainReport rep;
  const std::size_t n = x.rows();
  if (ids.size() != n)
    throw std::invalid_argument("train_identity_oracle: id count mismatch");
  const int n_classes = static_cast<int>(oracle.output_width());

  std::vector<std::vector<std::size_t>> by_id(n_classes);
  for (std::size_t i = 0; i < n; ++i) {
    if (ids[i] < 0 || ids[i] >= n_classes)
      throw std::invalid_argument("train_identity_oracle: id out of range");
    by_id[ids[i]].push_back(i);
  }
  int present = 0;
  for (const auto& g : by_id) {
    if (g.empty()) continue;
    present += 1;
    if (g.size() < 2)
      throw std::invalid_argument(
          "train_identity_oracle: every identity needs at least two images");
  }
  if (present <= 1) rep.degenerate = true;

  Rng rng(seed);
  std::vector<std::size_t> train, hold;
  for (auto& g : by_id) {
    if (g.empty()) continue;
    rng.shuffle(g);
    const std::size_t nh = std::max<std::size_t>(
        1, static_cast<std::size_t>(cfg.holdout_fraction * double(g.size())));
    for (std::size_t i = 0; i < g.size(); ++i)
      (i < nh ? hold : train).push_back(g[i]);
  }

  // Fixed augmented training set: clean images plus noisy copies.
  Tensor xt = take_rows(x, train);
  std::vector<Tensor> rowsv;
  std::vector<int> aug_ids;
  for (std::size_t i = 0; i < train.size(); ++i) {
    rowsv.push_back(row(xt, i));
    aug_ids.push_back(ids[train[i]]);
  }
  for (int c = 0; c < cfg.noise_copies; ++c) {
    for (std::size_t i = 0; i < train.size(); ++i) {
      Tensor noisy = row(xt, i);
      for (std::size_t j = 0; j < noisy.size(); ++j)
        noisy[j] += cfg.noise_sigma * rng.normal();
      rowsv.push_back(std::move(noisy));
      aug_ids.push_back(ids[train[i]]);
    }
  }
  Tensor xa({rowsv.size(), x.cols()});
  for (std::size_t i = 0; i < rowsv.size(); ++i) set_row(xa, i, rowsv[i]);

  const std::size_t na = xa.rows();
  const std::size_t b = std::min<std::size_t>(cfg.minibatch, na);
  StackOptimizer opt(oracle, cfg.lr);
  std::vector<std::size_t> order(na);
  std::iota(order.begin(), order.end(), 0);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(order);
    double epoch_loss = 0;
    std::size_t nb = 0;
    for (std::size_t at = 0; at + b <= na; at += b) {
      std::vector<std::size_t> batch(order.begin() + at, order.begin() + at + b);
      Tensor xb = take_rows(xa, batch);
      Tensor onehot({b, static_cast<std::size_t>(n_classes)});
      for (std::size_t i = 0; i < b; ++i)
        onehot.at(i, aug_ids[batch[i]]) = 1.0;
      Graph g;
      auto pv = oracle.param_vars(g);
      Var logits = oracle.forward(g, g.constant(xb), pv);
      Var loss = ce_with_logits(g, logits, onehot);
      auto grads = g.gradients(loss, pv);
      opt.step(oracle, g, grads);
      epoch_loss += g.value(loss)[0];
      nb += 1;
      rep.steps += 1;
    }
    rep.final_loss = nb ? epoch_loss / double(nb) : 0.0;
    rep.loss_curve.push_back(rep.final_loss);
  }

  const auto& eval_idx = hold.empty() ? train : hold;
  Tensor logits = oracle.forward_eval(take_rows(x, eval_idx));
  auto pred = argmax_rows(logits);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < eval_idx.size(); ++i)
    if (static_cast<int>(pred[i]) == ids[eval_idx[i]]) correct += 1;
  rep.final_metric = double(correct) / double(eval_idx.size());
  return rep;
}

// ---------------------------------------------------------------------------
// Amortizer.

TrainReport train_amortizer(LayerStack& amor, const LayerStack& enc,
                            const LayerStack& gen, std::size_t latent_dim,
                            const AmortizerTrainConfig& cfg,
                            std::uint64_t seed) {
  TrainReport rep;
  Rng rng(seed);
  StackOptimizer opt(amor, cfg.lr);
  for (int step = 0; step < cfg.steps; ++step) {
    Tensor z = rng.normal_tensor({cfg.minibatch, latent_dim});
    Tensor f = enc.forward_eval(gen.forward_eval(z));
    Graph g;
    auto pv = amor.param_vars(g);
    Var zhat = amor.forward(g, g.constant(f), pv);
    Var loss = diffcore::l2norm(diffcore::sub(zhat, g.constant(z)));
    auto grads = g.gradients(loss, pv);
    opt.step(amor, g, grads);
    rep.steps += 1;
    rep.final_loss = g.value(loss)[0];
    rep.loss_curve.push_back(rep.final_loss);
  }
  rep.final_metric = rep.final_loss;
  return rep;
}

// ---------------------------------------------------------------------------
// Checkpoints.

namespace {

void put_u32(std::ofstream& os, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>((v >> 8) & 0xff),
                        static_cast<unsigned char>((v >> 16) & 0xff),
                        static_cast<unsigned char>((v >> 24) & 0xff)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(std::ifstream& is) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4))
    throw std::runtime_error("checkpoint: truncated header field");
  return static_cast<std::uint32_t>(b[0]) |
         (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) |
         (static_cast<std::uint32_t>(b[3]) << 24);
}

void put_f64(std::ofstream& os, double v) {
  std::uint64_t u;
  static_assert(sizeof(u) == sizeof(v));
  std::memcpy(&u, &v, 8);
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((u >> (8 * i)) & 0xff);
  os.write(reinterpret_cast<const char*>(b), 8);
}

double get_f64(std::ifstream& is) {
  unsigned char b[8];
  if (!is.read(reinterpret_cast<char*>(b), 8))
    throw std::runtime_error("checkpoint: truncated payload");
  std::uint64_t u = 0;
  for (int i = 0; i < 8; ++i) u |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  double v;
  std::memcpy(&v, &u, 8);
  return v;
}

constexpr char kMagic[6] = {'F', 'C', 'N', 'E', 'T', '1'};

}  // namespace

void save_tensors(const std::string& path,
                  const std::vector<std::pair<std::string, Tensor>>& tensors) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open for writing: " + path);
  os.write(kMagic, 6);
  put_u32(os, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, t] : tensors) {
    put_u32(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    put_u32(os, static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d : t.shape()) put_u32(os, static_cast<std::uint32_t>(d));
    for (std::size_t i = 0; i < t.size(); ++i) put_f64(os, t[i]);
  }
  if (!os) throw std::runtime_error("write failed: " + path);
}

std::vector<std::pair<std::string, Tensor>> load_tensors(
    const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open: " + path);
  char magic[6];
  if (!is.read(magic, 6) || std::memcmp(magic, kMagic, 6) != 0)
    throw std::runtime_error("not a checkpoint file: " + path);
  const std::uint32_t count = get_u32(is);
  std::vector<std::pair<std::string, Tensor>> out;
  out.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint32_t name_len = get_u32(is);
    std::string name(name_len, '\0');
    if (!is.read(name.data(), name_len))
      throw std::runtime_error("checkpoint: truncated name");
    const std::uint32_t rank = get_u32(is);
    std::vector<std::size_t> shape(rank);
    for (auto& d : shape) d = get_u32(is);
    Tensor t(shape);
    for (std::size_t j = 0; j < t.size(); ++j) t[j] = get_f64(is);
    out.emplace_back(std::move(name), std::move(t));
  }
  return out;
}

namespace {

void append_stack(std::vector<std::pair<std::string, Tensor>>& out,
                  const std::string& prefix, const LayerStack& s) {
  if (s.empty()) return;
  Tensor spec({s.specs.size(), 3});
  for (std::size_t i = 0; i < s.specs.size(); ++i) {
    spec.at(i, 0) = static_cast<double>(s.specs[i].in);
    spec.at(i, 1) = static_cast<double>(s.specs[i].out);
    spec.at(i, 2) = static_cast<double>(s.specs[i].act);
  }
  out.emplace_back(prefix + ".spec", std::move(spec));
  for (std::size_t i = 0; i < s.specs.size(); ++i) {
    out.emplace_back(prefix + ".w" + std::to_string(i), s.params[2 * i]);
    out.emplace_back(prefix + ".b" + std::to_string(i), s.params[2 * i + 1]);
  }
}

LayerStack extract_stack(
    const std::vector<std::pair<std::string, Tensor>>& tensors,
    const std::string& prefix) {
  LayerStack s;
  const Tensor* spec = nullptr;
  for (const auto& [name, t] : tensors)
    if (name == prefix + ".spec") spec = &t;
  if (!spec) return s;
  for (std::size_t i = 0; i < spec->rows(); ++i) {
    s.specs.push_back({static_cast<std::size_t>(spec->at(i, 0)),
                       static_cast<std::size_t>(spec->at(i, 1)),
                       static_cast<Act>(static_cast<int>(spec->at(i, 2)))});
  }
  s.params.resize(2 * s.specs.size());
  for (std::size_t i = 0; i < s.specs.size(); ++i) {
    bool got_w = false, got_b = false;
    for (const auto& [name, t] : tensors) {
      if (name == prefix + ".w" + std::to_string(i)) {
        s.params[2 * i] = t;
        got_w = true;
      } else if (name == prefix + ".b" + std::to_string(i)) {
        s.params[2 * i + 1] = t;
        got_b = true;
      }
    }
    if (!got_w || !got_b)
      throw std::runtime_error("bundle: missing params for " + prefix);
  }
  return s;
}

}  // namespace

void save_bundle(const std::string& path, const ModelBundle& b) {
  std::vector<std::pair<std::string, Tensor>> tensors;
  tensors.emplace_back("latent_dim",
                       Tensor::scalar(static_cast<double>(b.latent_dim)));
  append_stack(tensors, "enc", b.enc);
  append_stack(tensors, "task_head", b.task_head);
  append_stack(tensors, "gen", b.gen);
  append_stack(tensors, "disc", b.disc);
  append_stack(tensors, "dec", b.dec);
  append_stack(tensors, "amor", b.amor);
  append_stack(tensors, "id_oracle", b.id_oracle);
  save_tensors(path, tensors);
}

ModelBundle load_bundle(const std::string& path) {
  const auto tensors = load_tensors(path);
  ModelBundle b;
  for (const auto& [name, t] : tensors)
    if (name == "latent_dim") b.latent_dim = static_cast<std::size_t>(t[0]);
  b.enc = extract_stack(tensors, "enc");
  b.task_head = extract_stack(tensors, "task_head");
  b.gen = extract_stack(tensors, "gen");
  b.disc = extract_stack(tensors, "disc");
  b.dec = extract_stack(tensors, "dec");
  b.amor = extract_stack(tensors, "amor");
  b.id_oracle = extract_stack(tensors, "id_oracle");
  return b;
}

}  // namespace fcraft::nets
