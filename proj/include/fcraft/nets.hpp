#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "fcraft/graph.hpp"
#include "fcraft/rng.hpp"
#include "fcraft/tensor.hpp"

namespace fcraft::nets {

enum class Act : std::uint8_t { kNone, kTanh, kSoftplus, kSigmoid, kRelu, kLeakyRelu };

struct LayerSpec {
  std::size_t in = 0;
  std::size_t out = 0;
  Act act = Act::kNone;
};

// A plain MLP: affine layers with elementwise activations, parameters stored
// as [W0, b0, W1, b1, ...] with W of shape (in x out). Batches are rows.
struct LayerStack {
  std::vector<LayerSpec> specs;
  std::vector<Tensor> params;

  static LayerStack make(std::vector<LayerSpec> layer_specs, Rng& rng);

  bool empty() const { return specs.empty(); }
  std::size_t input_width() const { return specs.front().in; }
  std::size_t output_width() const { return specs.back().out; }

  // Handy for critics that should start out exactly zero valued.
  void zero_last_layer();

  // Graph forwards. The two parameter modes matter: constants for frozen
  // nets (inversion, crafting), input nodes for the net being trained.
  diffcore::Var forward(diffcore::Graph& g, diffcore::Var x) const;
  diffcore::Var forward(diffcore::Graph& g, diffcore::Var x,
                        std::span<const diffcore::Var> param_vars) const;
  std::vector<diffcore::Var> param_vars(diffcore::Graph& g) const;

  // Graph-free forward for evaluation-only paths.
  Tensor forward_eval(const Tensor& x) const;
  // Activations after `layers` layers (layers < specs.size()); used for
  // penultimate-layer feature similarity.
  Tensor forward_eval_upto(const Tensor& x, std::size_t layers) const;

  std::uint64_t checksum() const;
};

struct TrainReport {
  int steps = 0;
  int gen_updates = 0;
  int disc_updates = 0;
  double final_loss = 0.0;
  double final_metric = 0.0;
  bool degenerate = false;
  bool diverged = false;
  std::vector<double> loss_curve;
};

// The full cast of networks one experiment works with. Individual stacks may
// be empty when a scenario does not need them.
struct ModelBundle {
  LayerStack enc;
  LayerStack task_head;
  LayerStack gen;
  LayerStack disc;
  LayerStack dec;
  LayerStack amor;
  LayerStack id_oracle;
  std::size_t latent_dim = 16;
};

// Builders for the default desk-scale architectures.
struct ArchConfig {
  std::size_t image_dim = 256;  // 16x16
  std::size_t feature_dim = 32;
  std::size_t latent_dim = 16;
  std::size_t enc_hidden = 96;
  std::size_t gen_hidden = 96;
  std::size_t n_attrs = 1;
  std::size_t n_ids = 8;
};

LayerStack make_encoder(const ArchConfig& a, Rng& rng);
LayerStack make_task_head(const ArchConfig& a, Rng& rng);
LayerStack make_generator(const ArchConfig& a, Rng& rng);
LayerStack make_generator_alt(const ArchConfig& a, Rng& rng);  // smaller latent, different widths
LayerStack make_discriminator(const ArchConfig& a, Rng& rng);
LayerStack make_decoder(const ArchConfig& a, Rng& rng);
LayerStack make_amortizer(const ArchConfig& a, Rng& rng);
LayerStack make_id_oracle(const ArchConfig& a, Rng& rng);

// Two-sided penalty pushing per-sample critic gradient norms at random
// interpolates of x1/x2 rows toward 1. Returns a scalar Var in g that is
// differentiable w.r.t. disc_pv.
diffcore::Var gradient_penalty(const LayerStack& disc, diffcore::Graph& g,
                               std::span<const diffcore::Var> disc_pv,
                               const Tensor& x1, const Tensor& x2, Rng& rng);

// Convenience: the penalty's value with the discriminator's stored params.
double gradient_penalty_value(const LayerStack& disc, const Tensor& x1,
                              const Tensor& x2, Rng& rng);

struct WganConfig {
  int gen_steps = 1000;
  int n_critic = 5;
  std::size_t minibatch = 32;
  double gp_weight = 10.0;
  double lr = 1e-3;
  double beta1 = 0.5;
  double beta2 = 0.9;
  // Post-training critic distance estimate (0 disables it).
  int dual_eval_steps = 0;
};

// Wasserstein GAN with gradient penalty, samples versus rows of x_pub.
// final_metric carries the post-training critic distance estimate between
// generated samples and x_pub when dual_eval_steps > 0.
TrainReport wgan_pretrain(LayerStack& gen, LayerStack& disc, const Tensor& x_pub,
                          std::size_t latent_dim, const WganConfig& cfg,
                          std::uint64_t seed);

struct TaskTrainConfig {
  int epochs = 200;
  std::size_t minibatch = 32;
  double lr = 1e-3;
  double holdout_fraction = 0.25;
  double auc_threshold = 0.9;
};

// Joint encoder + head training on binary attribute labels (logit BCE).
// final_metric is the held-out ranking score.
TrainReport train_task_model(LayerStack& enc, LayerStack& head, const Tensor& x,
                             const Tensor& y, const TaskTrainConfig& cfg,
                             std::uint64_t seed);

// Head-only variant for pipelines where the encoder is frozen and the serving
// side fits a fresh head on released features.
TrainReport train_task_head(LayerStack& head, const Tensor& features,
                            const Tensor& y, const TaskTrainConfig& cfg,
                            std::uint64_t seed);

struct OracleTrainConfig {
  int epochs = 300;
  std::size_t minibatch = 32;
  double lr = 1e-3;
  double holdout_fraction = 0.25;
  // Noisy copies make the oracle tolerant of imperfect reconstructions.
  int noise_copies = 2;
  double noise_sigma = 0.04;
};

// Identity classifier used for scoring reconstructions. Requires at least two
// images per identity; a single-identity set is flagged degenerate.
TrainReport train_identity_oracle(LayerStack& oracle, const Tensor& x,
                                  const std::vector<int>& ids,
                                  const OracleTrainConfig& cfg,
                                  std::uint64_t seed);

struct AmortizerTrainConfig {
  int steps = 1500;
  std::size_t minibatch = 32;
  double lr = 1e-3;
};

// Trains amor to approximately invert enc(gen(.)) in latent space.
TrainReport train_amortizer(LayerStack& amor, const LayerStack& enc,
                            const LayerStack& gen, std::size_t latent_dim,
                            const AmortizerTrainConfig& cfg, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Checkpoint files: "FCNET1" magic, u32 LE tensor count, then per tensor a
// u32 name length, the UTF-8 name, u32 rank, u32 dims and a float64 LE
// payload. Round-trips are bitwise.

void save_tensors(const std::string& path,
                  const std::vector<std::pair<std::string, Tensor>>& tensors);
std::vector<std::pair<std::string, Tensor>> load_tensors(const std::string& path);

void save_bundle(const std::string& path, const ModelBundle& b);
ModelBundle load_bundle(const std::string& path);

}  // namespace fcraft::nets
