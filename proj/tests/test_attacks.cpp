#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "fcraft/attacks.hpp"
#include "fcraft/nets.hpp"
#include "fcraft/rng.hpp"

using namespace fcraft;
using namespace fcraft::attacks;
using nets::Act;
using nets::LayerStack;

namespace {

double frob(const Tensor& a, const Tensor& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return std::sqrt(s);
}

double frob(const Tensor& a) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * a[i];
  return std::sqrt(s);
}

// Single linear layer acting as the identity on d dims.
LayerStack identity_stack(std::size_t d) {
  LayerStack s;
  s.specs = {{d, d, Act::kNone}};
  s.params = {Tensor({d, d}), Tensor({d})};
  for (std::size_t i = 0; i < d; ++i) s.params[0].at(i, i) = 1.0;
  return s;
}

// Keeps the first k of d input dims, drops the rest.
LayerStack projection_stack(std::size_t d, std::size_t k) {
  LayerStack s;
  s.specs = {{d, k, Act::kNone}};
  s.params = {Tensor({d, k}), Tensor({k})};
  for (std::size_t i = 0; i < k; ++i) s.params[0].at(i, i) = 1.0;
  return s;
}

}  // namespace

TEST_CASE("blackbox decoder learns the identity channel with one oracle query") {
  Rng rng(61);
  const std::size_t d = 12;
  LayerStack enc = identity_stack(d);
  EncoderOracle oracle(enc);

  Tensor x = rng.uniform_tensor({60, d}, 0.0, 1.0);
  LayerStack dec = LayerStack::make({{d, 24, Act::kLeakyRelu}, {24, d, Act::kNone}},
                                    rng);
  DecoderTrainConfig cfg;
  cfg.epochs = 700;
  cfg.lr = 0.01;
  nets::TrainReport rep = train_blackbox_decoder(oracle, dec, x, cfg, 7);
  CHECK(oracle.queries() == 1);
  CHECK(rep.final_metric <= 0.05);
  CHECK_FALSE(rep.degenerate);
}

TEST_CASE("blackbox decoder training with zero epochs is a no-op") {
  Rng rng(62);
  LayerStack enc = identity_stack(4);
  EncoderOracle oracle(enc);
  LayerStack dec = LayerStack::make({{4, 8, Act::kTanh}, {8, 4, Act::kNone}}, rng);
  const std::uint64_t before = dec.checksum();
  DecoderTrainConfig cfg;
  cfg.epochs = 0;
  train_blackbox_decoder(oracle, dec, rng.uniform_tensor({10, 4}, 0, 1), cfg, 1);
  CHECK(dec.checksum() == before);
}

TEST_CASE("rank-deficient encoder floors the decoder error at the lost energy") {
  Rng rng(63);
  const std::size_t d = 16, keep = 8;
  LayerStack enc = projection_stack(d, keep);
  EncoderOracle oracle(enc);

  // Independent pixels: nothing in the kept coordinates predicts the dropped
  // ones, so no decoder can recover their energy.
  Tensor x = rng.normal_tensor({80, d});
  LayerStack dec = LayerStack::make(
      {{keep, 24, Act::kLeakyRelu}, {24, d, Act::kNone}}, rng);
  DecoderTrainConfig cfg;
  cfg.epochs = 80;
  cfg.lr = 3e-3;
  cfg.rel_err_threshold = 1.0;
  nets::TrainReport rep = train_blackbox_decoder(oracle, dec, x, cfg, 9);

  // The held-out error cannot drop below the dropped-coordinate energy; with
  // E[x]=0 the best predictor of a dropped pixel is 0, leaving about half of
  // the total energy. Generous slack for the finite sample.
  CHECK(rep.final_metric >= 0.5);
}

TEST_CASE("whitebox inversion stays put at a fixed point") {
  Rng rng(64);
  nets::ArchConfig arch;
  arch.image_dim = 20;
  arch.feature_dim = 6;
  arch.latent_dim = 4;
  arch.enc_hidden = 12;
  arch.gen_hidden = 12;
  LayerStack enc = nets::make_encoder(arch, rng);
  LayerStack gen = nets::make_generator(arch, rng);

  Tensor z_true = rng.normal_tensor({3, 4});
  Tensor target = enc.forward_eval(gen.forward_eval(z_true));
  InversionResult res = invert_whitebox(enc, gen, target, z_true, 100, 0.01);
  CHECK(res.iters_used == 0);
  CHECK(res.loss == 0.0);
  CHECK(res.latents.bitwise_equal(z_true));
  CHECK(res.images.bitwise_equal(gen.forward_eval(z_true)));
}

TEST_CASE("whitebox inversion with zero budget returns the start") {
  Rng rng(65);
  nets::ArchConfig arch;
  arch.image_dim = 20;
  arch.feature_dim = 6;
  arch.latent_dim = 4;
  arch.enc_hidden = 12;
  arch.gen_hidden = 12;
  LayerStack enc = nets::make_encoder(arch, rng);
  LayerStack gen = nets::make_generator(arch, rng);
  Tensor target = rng.normal_tensor({3, 6});
  Tensor z0 = rng.normal_tensor({3, 4});
  InversionResult res = invert_whitebox(enc, gen, target, z0, 0, 0.01);
  CHECK(res.latents.bitwise_equal(z0));
  CHECK(res.images.bitwise_equal(gen.forward_eval(z0)));
  CHECK(res.loss ==
        doctest::Approx(frob(enc.forward_eval(gen.forward_eval(z0)), target))
            .epsilon(1e-15));
}

TEST_CASE("whitebox inversion matches least squares on a linear channel") {
  Rng rng(66);
  const std::size_t lat = 3, img = 7, feat = 5;
  // enc and gen single linear layers; the composite latent->feature map is
  // A = Wg We, full row rank with these dims almost surely.
  LayerStack gen;
  gen.specs = {{lat, img, Act::kNone}};
  gen.params = {rng.normal_tensor({lat, img}), Tensor({img})};
  LayerStack enc;
  enc.specs = {{img, feat, Act::kNone}};
  enc.params = {rng.normal_tensor({img, feat}), Tensor({feat})};

  Tensor a({lat, feat});
  for (std::size_t i = 0; i < lat; ++i)
    for (std::size_t j = 0; j < feat; ++j)
      for (std::size_t k = 0; k < img; ++k)
        a.at(i, j) += gen.params[0].at(i, k) * enc.params[0].at(k, j);

  // Build the target from a known latent plus an off-range component; the
  // least-squares solution is then the known latent itself only if the target
  // is in range, so use an in-range target for a crisp oracle.
  Tensor z_opt = rng.normal_tensor({4, lat});
  Tensor target({4, feat});
  for (std::size_t r = 0; r < 4; ++r)
    for (std::size_t j = 0; j < feat; ++j)
      for (std::size_t i = 0; i < lat; ++i)
        target.at(r, j) += z_opt.at(r, i) * a.at(i, j);

  Tensor z0 = rng.normal_tensor({4, lat});
  InversionResult res = invert_whitebox(enc, gen, target, z0, 4000, 0.05);
  CHECK(frob(res.latents, z_opt) / frob(z_opt) <= 1e-3);
}

TEST_CASE("whitebox inversion is monotone in budget and deterministic") {
  Rng rng(67);
  nets::ArchConfig arch;
  arch.image_dim = 20;
  arch.feature_dim = 6;
  arch.latent_dim = 4;
  arch.enc_hidden = 12;
  arch.gen_hidden = 12;
  LayerStack enc = nets::make_encoder(arch, rng);
  LayerStack gen = nets::make_generator(arch, rng);
  Tensor target = rng.normal_tensor({3, 6});
  Tensor z0 = rng.normal_tensor({3, 4});

  double prev = 1e300;
  for (int iters : {0, 10, 50, 200}) {
    InversionResult res = invert_whitebox(enc, gen, target, z0, iters, 0.02);
    CHECK(res.loss <= prev + 1e-12);
    prev = res.loss;
  }

  InversionResult r1 = invert_whitebox(enc, gen, target, z0, 120, 0.02);
  InversionResult r2 = invert_whitebox(enc, gen, target, z0, 120, 0.02);
  CHECK(r1.latents.bitwise_equal(r2.latents));

  InversionConfig cfg;
  cfg.iters = 60;
  cfg.restarts = 3;
  InversionResult m1 = invert_whitebox_restarts(enc, gen, target, cfg, 5);
  InversionResult m2 = invert_whitebox_restarts(enc, gen, target, cfg, 5);
  CHECK(m1.latents.bitwise_equal(m2.latents));
  // More restarts can only help.
  cfg.restarts = 1;
  InversionResult single = invert_whitebox_restarts(enc, gen, target, cfg, 5);
  CHECK(m1.loss <= single.loss + 1e-12);
}

TEST_CASE("hybrid attack starts at the decoder output and only improves") {
  Rng rng(68);
  const std::size_t d = 10;
  LayerStack enc = identity_stack(d);
  LayerStack dec = LayerStack::make({{d, 16, Act::kTanh}, {16, d, Act::kNone}}, rng);
  Tensor target = rng.uniform_tensor({4, d}, 0.0, 1.0);

  HybridConfig none;
  none.iters = 0;
  InversionResult res0 = attack_hybrid(enc, dec, target, none);
  CHECK(res0.images.bitwise_equal(dec.forward_eval(target)));
  CHECK(res0.latents.size() == 0);

  // With an identity encoder the optimum is the target itself.
  HybridConfig cfg;
  cfg.iters = 4000;
  cfg.lr = 0.01;
  InversionResult res = attack_hybrid(enc, dec, target, cfg);
  CHECK(res.loss <= res0.loss);
  CHECK(frob(enc.forward_eval(res.images), target) <= 1e-4);
}

TEST_CASE("a1 adaptation with zero epochs leaves the model alone") {
  Rng rng(69);
  const std::size_t d = 8;
  LayerStack enc = identity_stack(d);
  LayerStack dec = LayerStack::make({{d, 12, Act::kTanh}, {12, d, Act::kNone}}, rng);
  Tensor x = rng.uniform_tensor({12, d}, 0.0, 1.0);
  auto oracle = [&](const Tensor& q) { return enc.forward_eval(q); };

  const std::uint64_t before = dec.checksum();
  A1Config cfg;
  cfg.epochs = 0;
  A1Report rep = adapt_a1(A1Kind::kBlack, enc, dec, oracle, x, cfg, 1);
  CHECK(dec.checksum() == before);
  CHECK(rep.epoch_loss.size() == 1);
  CHECK(rep.oracle_queries == 1);
}

TEST_CASE("a1 black-box adaptation makes progress on an undefended channel") {
  Rng rng(70);
  const std::size_t d = 8;
  LayerStack enc = identity_stack(d);
  LayerStack dec = LayerStack::make({{d, 16, Act::kLeakyRelu}, {16, d, Act::kNone}},
                                    rng);
  Tensor x = rng.uniform_tensor({24, d}, 0.0, 1.0);
  auto oracle = [&](const Tensor& q) { return enc.forward_eval(q); };

  A1Config cfg;
  cfg.epochs = 8;
  cfg.minibatch = 8;
  cfg.lr = 3e-3;
  std::vector<int> hook_epochs;
  A1Report rep = adapt_a1(A1Kind::kBlack, enc, dec, oracle, x, cfg, 2,
                          [&](int e, double, const LayerStack&) {
                            hook_epochs.push_back(e);
                          });
  REQUIRE(rep.epoch_loss.size() == 9);
  CHECK(rep.epoch_loss.back() < rep.epoch_loss.front());
  REQUIRE(hook_epochs.size() == 9);
  for (int e = 0; e <= 8; ++e) CHECK(hook_epochs[e] == e);
}

TEST_CASE("a1 white-box adaptation improves the generator fit") {
  Rng rng(71);
  nets::ArchConfig arch;
  arch.image_dim = 16;
  arch.feature_dim = 6;
  arch.latent_dim = 4;
  arch.enc_hidden = 10;
  arch.gen_hidden = 10;
  LayerStack enc = nets::make_encoder(arch, rng);
  LayerStack gen = nets::make_generator(arch, rng);
  Tensor x = rng.uniform_tensor({10, 16}, 0.0, 1.0);
  auto oracle = [&](const Tensor& q) { return enc.forward_eval(q); };

  A1Config cfg;
  cfg.epochs = 5;
  cfg.minibatch = 5;
  cfg.inv_iters = 40;
  A1Report rep = adapt_a1(A1Kind::kWhite, enc, gen, oracle, x, cfg, 3);
  REQUIRE(rep.epoch_loss.size() == 6);
  CHECK(rep.epoch_loss.back() < rep.epoch_loss.front());
}

TEST_CASE("a3 averaging obeys the small cases and rejects shape drift") {
  Rng rng(72);
  Tensor x = rng.uniform_tensor({4, 6}, 0.0, 1.0);

  int calls = 0;
  auto deterministic = [&](const Tensor& q) {
    calls += 1;
    Tensor f(q.shape());
    for (std::size_t i = 0; i < q.size(); ++i) f[i] = 2.0 * q[i] + 1.0;
    return f;
  };
  Tensor one = attack_a3_average(deterministic, x, 1);
  CHECK(calls == 1);
  Tensor five = attack_a3_average(deterministic, x, 5);
  CHECK(calls == 6);
  // Constant responses average to themselves, up to summation roundoff.
  CHECK(max_abs_diff(one, five) <= 1e-12);

  // Zero-mean noise: the average is closer to the clean response than a lone
  // query is on average.
  Rng noise_rng(73);
  auto noisy = [&](const Tensor& q) {
    Tensor f(q.shape());
    for (std::size_t i = 0; i < q.size(); ++i)
      f[i] = q[i] + 0.3 * noise_rng.normal();
    return f;
  };
  Tensor avg = attack_a3_average(noisy, x, 8);
  double single_dist = 0;
  for (int t = 0; t < 8; ++t) single_dist += frob(noisy(x), x) / 8.0;
  CHECK(frob(avg, x) < single_dist);

  int shape_calls = 0;
  auto shapeshifter = [&](const Tensor& q) {
    shape_calls += 1;
    return shape_calls == 1 ? q : Tensor({q.rows(), q.cols() + 1});
  };
  CHECK_THROWS_AS(attack_a3_average(shapeshifter, x, 3), std::runtime_error);
  CHECK_THROWS_AS(attack_a3_average(deterministic, x, 0), std::invalid_argument);
}
