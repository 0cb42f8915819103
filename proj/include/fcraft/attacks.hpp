#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "fcraft/nets.hpp"
#include "fcraft/tensor.hpp"

namespace fcraft::attacks {

// Black-box access to an encoder: forward queries only, counted. Attack code
// that must not look inside the encoder receives this wrapper instead of the
// LayerStack, which makes the contract checkable (query count moves, nothing
// else is reachable).
class EncoderOracle {
 public:
  explicit EncoderOracle(const nets::LayerStack& enc) : enc_(&enc) {}

  Tensor query(const Tensor& x) {
    queries_ += 1;
    return enc_->forward_eval(x);
  }
  std::size_t queries() const { return queries_; }
  std::size_t feature_dim() const { return enc_->output_width(); }

 private:
  const nets::LayerStack* enc_;
  std::size_t queries_ = 0;
};

struct DecoderTrainConfig {
  int epochs = 200;
  std::size_t minibatch = 32;
  double lr = 1e-3;
  double holdout_fraction = 0.2;
  // Held-out relative reconstruction error above this flags the report
  // degenerate.
  double rel_err_threshold = 0.35;
};

// Shadow decoder: min over dec of ||dec(enc(x)) - x|| on public images.
// final_metric is the held-out relative error ||dec(enc(x)) - x|| / ||x||.
nets::TrainReport train_blackbox_decoder(EncoderOracle& enc,
                                         nets::LayerStack& dec,
                                         const Tensor& x_pub,
                                         const DecoderTrainConfig& cfg,
                                         std::uint64_t seed);

struct InversionResult {
  Tensor images;       // reconstructed batch
  Tensor latents;      // best-response latents, empty for pixel-space attacks
  double loss = 0.0;   // final feature-matching distance
  int iters_used = 0;
  bool aborted = false;  // numeric failure, partial result returned
};

struct InversionConfig {
  int iters = 600;
  double lr = 0.01;
  int restarts = 1;
};

// Latent-space inversion: Adam on z minimizing ||F - enc(gen(z))||, with a
// monotone acceptance rule. A proposed step that raises the loss is rolled
// back and the step size halved, so the recorded loss never increases; a
// start at an exact solution stays put. Stops early once the loss hits zero.
InversionResult invert_whitebox(const nets::LayerStack& enc,
                                const nets::LayerStack& gen,
                                const Tensor& target_features, const Tensor& z0,
                                int iters, double lr);

// Multi-start wrapper: standard-normal z0 per restart, lowest final loss
// wins. Deterministic in (inputs, cfg, seed).
InversionResult invert_whitebox_restarts(const nets::LayerStack& enc,
                                         const nets::LayerStack& gen,
                                         const Tensor& target_features,
                                         const InversionConfig& cfg,
                                         std::uint64_t seed);

struct HybridConfig {
  int iters = 150;
  double lr = 0.005;
};

// Pixel-space refinement: start from dec(F) and Adam-step the pixels
// themselves to pull enc(x) toward F. Same acceptance rule as the latent
// inversion, so the final feature loss never exceeds the initialization's.
InversionResult attack_hybrid(const nets::LayerStack& enc,
                              const nets::LayerStack& dec,
                              const Tensor& target_features,
                              const HybridConfig& cfg);

// The protection service from the attacker's side: images in, protected
// features out.
using CraftOracle = std::function<Tensor(const Tensor&)>;

enum class A1Kind { kWhite, kBlack };

struct A1Config {
  int epochs = 30;
  double lr = 1e-3;
  std::size_t minibatch = 16;
  // White variant: per-epoch cold inversion budget for re-solving z*.
  int inv_iters = 120;
  double inv_lr = 0.01;
};

// Called at epoch 0 with the untouched model and after every epoch with the
// updated one; loss is the attacker's current reconstruction distance on its
// own training images.
using A1Hook = std::function<void(int epoch, double loss,
                                  const nets::LayerStack& model)>;

struct A1Report {
  std::vector<double> epoch_loss;  // index = epoch, [0] recorded pre-update
  std::size_t oracle_queries = 0;
};

// Adaptive attack: queries craft_oracle once for protected features of x_adv,
// then keeps training the attack model against that fixed (features, images)
// set. White updates the generator (RMSProp) through ||gen(z*) - x|| with z*
// re-solved cold each epoch against the current generator; black updates the
// decoder (Adam) through ||dec(features) - x||. enc is only touched by the
// white variant's inversions.
A1Report adapt_a1(A1Kind kind, const nets::LayerStack& enc,
                  nets::LayerStack& model, const CraftOracle& craft_oracle,
                  const Tensor& x_adv, const A1Config& cfg, std::uint64_t seed,
                  const A1Hook& hook = {});

// Query-averaging attack: k identical queries, elementwise mean of the
// responses in whatever order the oracle returned them. Throws if response
// shapes disagree.
Tensor attack_a3_average(const CraftOracle& craft_oracle, const Tensor& x,
                         int k);

// Harness-facing description of one attack run.
struct AttackConfig {
  std::string kind = "white";  // white | black | hybrid | a1-white | a1-black | a3
  InversionConfig inversion;
  HybridConfig hybrid;
  A1Config a1;
  int a3_queries = 5;
  std::uint64_t seed = 1;
};

}  // namespace fcraft::attacks
