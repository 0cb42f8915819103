#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fcraft/attacks.hpp"
#include "fcraft/crafter.hpp"
#include "fcraft/nets.hpp"
#include "fcraft/pii.hpp"
#include "fcraft/synthdata.hpp"

namespace fcraft::harness {

// Budgets for the shared preparation stages. Defaults are sized for a
// single-core desk run; experiments that only need a rough world (smoke
// tests) shrink them through the config file.
struct PrepConfig {
  double pub_fraction = 0.5;
  double train_test_ratio = 2.0;
  nets::WganConfig wgan;
  nets::TaskTrainConfig task;
  nets::OracleTrainConfig oracle;
  attacks::DecoderTrainConfig decoder;
  nets::AmortizerTrainConfig amortizer;
};

struct ExperimentConfig {
  std::string scenario = "deployment";  // deployment | development
  synthdata::DataConfig data;
  nets::ArchConfig arch;
  PrepConfig prep;
  crafter::CraftConfig craft;
  std::vector<attacks::AttackConfig> attacks;
  std::vector<double> betas{1.0};
  std::string out_dir;
  std::uint64_t seed = 0;
};

// One scatter point: a defense at one weight, scored under one attack.
struct TradeoffRecord {
  std::string defense;  // none | crafter | crafter-z | adv-learn | public-only
  std::string scenario;
  double beta = 0.0;  // crafting weight; the game weight for adv-learn rows
  std::string attack;
  pii::MetricsRecord metrics;
  std::uint64_t seed = 0;
};

// Everything the pipelines share: the split corpus and the trained cast.
struct World {
  synthdata::DatasetSplit split;
  nets::ModelBundle models;
};

// Runs the offline stages in order: generate and split the data, pretrain
// the generator pair on public images, train the encoder and task head on
// the public attribute labels, train the scoring oracle, the shadow decoder
// and the warm-start amortizer. A failure in any stage rethrows with the
// stage name prefixed. Deterministic in cfg.seed.
World prepare_world(const ExperimentConfig& cfg);

// 0/1 attribute labels as a column tensor, the layout the trainers expect.
Tensor attr_labels(const synthdata::Dataset& d);

// Feature-space protection for one batch using cfg.craft at the given
// weight. Convenience used by the pipelines and the CLI.
Tensor craft_features(const World& w, const crafter::CraftConfig& cc,
                      const Tensor& x);

// Scores one defense's released features under one attack and fills a full
// metrics row. craft_fn is the mechanism as the metric sees it (images in,
// features out) and drives the leakage term; x_ref/ids/labels describe the
// private images behind the features.
pii::MetricsRecord score_attack(const World& w, const Tensor& features,
                                const pii::CraftFn& craft_fn,
                                const Tensor& x_ref,
                                const std::vector<int>& ids,
                                const Tensor& labels,
                                const attacks::AttackConfig& atk,
                                std::uint64_t seed);

// Crafts the private test features at every weight in cfg.betas, runs every
// configured attack against each, and always emits an unprotected control
// row per attack first. Record order is control, then weights in list
// order, attacks in list order within each.
std::vector<TradeoffRecord> run_deployment_pipeline(const ExperimentConfig& cfg);

// Development scene: crafted training features go to a fresh task head, and
// the attacks run against those training features. Emits the unprotected
// control, a public-only baseline row (no private data, zero leakage by
// construction), then the crafted rows.
std::vector<TradeoffRecord> run_development_pipeline(const ExperimentConfig& cfg);

struct AdvLearnOpts {
  std::size_t minibatch = 32;
  double lr = 1e-3;
  std::uint64_t seed = 0;
};

struct AdvLearnReport {
  // Co-trained decoder's mean per-image reconstruction error after each
  // epoch, measured on the full training set.
  std::vector<double> recon_curve;
  double final_task_loss = 0.0;
  bool diverged = false;
};

// The game-based baseline defense: the defender updates enc and head to
// minimize lambda * L_privacy + (1 - lambda) * L_utility, where L_privacy
// rewards a large co-trained reconstruction error (a stay-away objective)
// and L_utility is the attribute cross-entropy; the attacker updates dec to
// shrink that same reconstruction error. Steps alternate per minibatch, and
// enc/head/dec are trained in place.
AdvLearnReport adv_learning_baseline(nets::LayerStack& enc,
                                     nets::LayerStack& head,
                                     nets::LayerStack& dec,
                                     const synthdata::Dataset& data,
                                     double lambda, int epochs,
                                     const AdvLearnOpts& opts = {});

struct AdaptiveReport {
  // Oracle accuracy on victim reconstructions after each attacker epoch;
  // index 0 is the basic attack, before any adaptation.
  std::vector<double> crafter_white;
  std::vector<double> crafter_black;
  std::vector<double> advlearn_black;
  // Query-averaging attack on the crafting oracle.
  double a3_single = 0.0;
  double a3_unshuffled = 0.0;
  double a3_shuffled = 0.0;
  // Verdicts: adaptation never lifts the crafter curves meaningfully, the
  // game-based defense is overcome, averaging helps, the guard blocks it.
  bool crafter_contained = false;
  bool advlearn_overcome = false;
  bool a3_gain = false;
  bool a3_blocked = false;
};

// Matched-budget adaptive study. Attackers fine-tune on protected features
// of public images they own, and every epoch is scored on the protected
// private test features; the averaging attack queries the crafting service
// repeatedly with and without the caching guard. Writes per-epoch CSV
// curves and a summary into cfg.out_dir when set.
AdaptiveReport adaptive_robustness_experiment(const ExperimentConfig& cfg);

// CSV with header defense,scenario,beta,attack,utility_auc,eval_acc,ssim,
// fsim,epsilon,seed. Doubles at 17 significant digits, so a round trip
// through the file reproduces records bit for bit.
void export_records(const std::vector<TradeoffRecord>& records,
                    const std::string& path);
std::vector<TradeoffRecord> read_records(const std::string& path);

// Flat key=value experiment configs ('#' comments, blank lines ignored).
// Unknown keys are refused by name. serialize_config emits every key, and
// parse_config(serialize_config(c)) reproduces c exactly.
ExperimentConfig parse_config(const std::string& text);
ExperimentConfig load_config(const std::string& path);
std::string serialize_config(const ExperimentConfig& cfg);

}  // namespace fcraft::harness
