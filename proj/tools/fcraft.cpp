// Workbench CLI: stage-by-stage artifact builds (gen-data through attack)
// plus the end-to-end sweep and adaptive studies. Stage commands exchange
// artifacts through files in --out, so a pipeline can be rerun from any
// point; seeds derive from the config seed exactly as in the library
// pipelines, which keeps CLI artifacts and pipeline results interchangeable.

#include <cstdio>
#include <exception>
#include <filesystem>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "fcraft/attacks.hpp"
#include "fcraft/crafter.hpp"
#include "fcraft/harness.hpp"
#include "fcraft/nets.hpp"
#include "fcraft/pii.hpp"
#include "fcraft/rng.hpp"
#include "fcraft/synthdata.hpp"

using namespace fcraft;
using harness::ExperimentConfig;
using harness::TradeoffRecord;
using harness::World;

namespace {

std::string pub_path(const std::string& out) { return out + "/pub.ds"; }
std::string train_path(const std::string& out) { return out + "/train.ds"; }
std::string test_path(const std::string& out) { return out + "/test.ds"; }
std::string bundle_path(const std::string& out) { return out + "/models.bin"; }
std::string features_path(const std::string& out) {
  return out + "/features.bin";
}

nets::ArchConfig derived_arch(const ExperimentConfig& cfg) {
  nets::ArchConfig a = cfg.arch;
  a.image_dim = cfg.data.side * cfg.data.side;
  a.n_ids = cfg.data.n_identities;
  return a;
}

World load_world(const std::string& out) {
  World w;
  w.split.x_pub = synthdata::load_dataset(pub_path(out));
  w.split.x_train = synthdata::load_dataset(train_path(out));
  w.split.x_test = synthdata::load_dataset(test_path(out));
  w.models = nets::load_bundle(bundle_path(out));
  return w;
}

void print_records(const std::vector<TradeoffRecord>& records) {
  std::printf("%-12s %-12s %8s %-9s %7s %8s %7s %7s %9s\n", "defense",
              "scenario", "beta", "attack", "auc", "evalacc", "ssim", "fsim",
              "epsilon");
  for (const TradeoffRecord& r : records)
    std::printf("%-12s %-12s %8.3g %-9s %7.4f %8.4f %7.4f %7.4f %9.5f\n",
                r.defense.c_str(), r.scenario.c_str(), r.beta,
                r.attack.c_str(), r.metrics.utility, r.metrics.eval_acc,
                r.metrics.ssim, r.metrics.fsim, r.metrics.epsilon);
}

int run(int argc, char** argv) {
  CLI::App app{"feature-crafting privacy workbench"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out = "out";
  std::uint64_t seed_override = 0;
  bool seed_given = false;
  app.add_option("--config", config_path, "flat key=value experiment config");
  app.add_option("--out", out, "artifact directory")->capture_default_str();
  app.add_option("--seed", seed_override, "override the config seed")
      ->each([&](const std::string&) { seed_given = true; });

  double beta = -1.0;  // negative means: first entry of the config's list
  std::string csv_path;
  CLI::App* c_gen = app.add_subcommand("gen-data", "generate and split the corpus");
  CLI::App* c_pre = app.add_subcommand("pretrain", "train the generator pair on public images");
  CLI::App* c_task = app.add_subcommand("train-task", "train the task model and evaluation stands");
  CLI::App* c_craft = app.add_subcommand("craft", "craft protected test features");
  c_craft->add_option("--beta", beta, "utility weight for this run");
  CLI::App* c_atk = app.add_subcommand("attack", "attack the crafted features and score them");
  c_atk->add_option("--beta", beta, "weight the features were crafted at");
  CLI::App* c_sweep = app.add_subcommand("sweep", "run the scenario pipeline over the beta list");
  CLI::App* c_adapt = app.add_subcommand("adaptive", "run the adaptive-attack study");
  CLI::App* c_rep = app.add_subcommand("report", "pretty-print a records CSV");
  c_rep->add_option("--csv", csv_path, "records file (default <out>/deployment.csv)");

  CLI11_PARSE(app, argc, argv);

  ExperimentConfig cfg;
  if (!config_path.empty()) cfg = harness::load_config(config_path);
  if (seed_given) cfg.seed = seed_override;
  cfg.out_dir = out;
  const nets::ArchConfig arch = derived_arch(cfg);

  if (app.got_subcommand(c_gen)) {
    synthdata::Dataset full = synthdata::generate_dataset(cfg.data, cfg.seed);
    synthdata::DatasetSplit split = synthdata::split_dataset(
        full, cfg.prep.pub_fraction, cfg.prep.train_test_ratio,
        derive_seed(cfg.seed, 20));
    std::filesystem::create_directories(out);
    synthdata::dump_dataset(pub_path(out), split.x_pub);
    synthdata::dump_dataset(train_path(out), split.x_train);
    synthdata::dump_dataset(test_path(out), split.x_test);
    std::printf("wrote %zu public, %zu train, %zu test images (%zux%zu)\n",
                split.x_pub.count(), split.x_train.count(),
                split.x_test.count(), cfg.data.side, cfg.data.side);
    return 0;
  }

  if (app.got_subcommand(c_pre)) {
    synthdata::Dataset pub = synthdata::load_dataset(pub_path(out));
    Rng r(derive_seed(cfg.seed, 21));
    nets::ModelBundle b;
    b.gen = nets::make_generator(arch, r);
    b.disc = nets::make_discriminator(arch, r);
    b.latent_dim = arch.latent_dim;
    nets::TrainReport rep =
        nets::wgan_pretrain(b.gen, b.disc, pub.images, arch.latent_dim,
                            cfg.prep.wgan, derive_seed(cfg.seed, 22));
    nets::save_bundle(bundle_path(out), b);
    std::printf("generator pretrained: %d steps, critic distance %.4f\n",
                rep.steps, rep.final_metric);
    return 0;
  }

  if (app.got_subcommand(c_task)) {
    World w = load_world(out);
    synthdata::Dataset full = synthdata::generate_dataset(cfg.data, cfg.seed);
    {
      Rng r(derive_seed(cfg.seed, 23));
      w.models.enc = nets::make_encoder(arch, r);
      w.models.task_head = nets::make_task_head(arch, r);
      nets::TrainReport rep = nets::train_task_model(
          w.models.enc, w.models.task_head, w.split.x_pub.images,
          harness::attr_labels(w.split.x_pub), cfg.prep.task,
          derive_seed(cfg.seed, 24));
      std::printf("task model: held-out auc %.4f\n", rep.final_metric);
    }
    {
      Rng r(derive_seed(cfg.seed, 25));
      w.models.id_oracle = nets::make_id_oracle(arch, r);
      nets::TrainReport rep = nets::train_identity_oracle(
          w.models.id_oracle, full.images, full.ids, cfg.prep.oracle,
          derive_seed(cfg.seed, 26));
      std::printf("identity oracle: held-out accuracy %.4f\n",
                  rep.final_metric);
    }
    {
      Rng r(derive_seed(cfg.seed, 27));
      w.models.dec = nets::make_decoder(arch, r);
      attacks::EncoderOracle q(w.models.enc);
      nets::TrainReport rep = attacks::train_blackbox_decoder(
          q, w.models.dec, w.split.x_pub.images, cfg.prep.decoder,
          derive_seed(cfg.seed, 28));
      std::printf("shadow decoder: held-out relative error %.4f\n",
                  rep.final_metric);
    }
    {
      Rng r(derive_seed(cfg.seed, 29));
      w.models.amor = nets::make_amortizer(arch, r);
      nets::train_amortizer(w.models.amor, w.models.enc, w.models.gen,
                            arch.latent_dim, cfg.prep.amortizer,
                            derive_seed(cfg.seed, 30));
      std::printf("amortizer trained\n");
    }
    nets::save_bundle(bundle_path(out), w.models);
    return 0;
  }

  if (app.got_subcommand(c_craft)) {
    World w = load_world(out);
    crafter::CraftConfig cc = cfg.craft;
    cc.beta = beta >= 0 ? beta : cfg.betas.front();
    cc.seed = derive_seed(cfg.seed, 60);
    crafter::CraftOutput res = crafter::craft(
        w.models.enc, w.models.gen, w.models.disc, w.split.x_test.images, cc);
    nets::save_tensors(features_path(out), {{"features", res.features}});
    const auto& tr = res.trajectory;
    std::printf("crafted %zu features at beta %.3g", res.features.rows(),
                cc.beta);
    if (!tr.empty())
      std::printf(" (privacy %.4f -> %.4f, anchor %.4f -> %.4f)",
                  tr.front().first, tr.back().first, tr.front().second,
                  tr.back().second);
    std::printf("\n");
    for (const std::string& wmsg : res.warnings)
      std::printf("warning: %s\n", wmsg.c_str());
    return 0;
  }

  if (app.got_subcommand(c_atk)) {
    World w = load_world(out);
    const double b = beta >= 0 ? beta : cfg.betas.front();
    Tensor features;
    pii::CraftFn fn;
    try {
      features = nets::load_tensors(features_path(out)).at(0).second;
      crafter::CraftConfig cc = cfg.craft;
      cc.beta = b;
      cc.seed = derive_seed(cfg.seed, 60);
      fn = [&w, cc](const Tensor& xb) {
        return harness::craft_features(w, cc, xb);
      };
    } catch (const std::exception&) {
      features = w.models.enc.forward_eval(w.split.x_test.images);
      fn = [&w](const Tensor& xb) { return w.models.enc.forward_eval(xb); };
      std::printf("no crafted features found, scoring the raw encoder output\n");
    }
    std::vector<TradeoffRecord> records;
    for (std::size_t i = 0; i < cfg.attacks.size(); ++i) {
      TradeoffRecord r;
      r.defense = "crafter";
      r.scenario = cfg.scenario;
      r.beta = b;
      r.attack = cfg.attacks[i].kind;
      r.metrics = harness::score_attack(
          w, features, fn, w.split.x_test.images, w.split.x_test.ids,
          harness::attr_labels(w.split.x_test), cfg.attacks[i],
          derive_seed(cfg.seed, 110 + i));
      r.seed = cfg.seed;
      records.push_back(std::move(r));
    }
    print_records(records);
    harness::export_records(records, out + "/attack.csv");
    return 0;
  }

  if (app.got_subcommand(c_sweep)) {
    std::vector<TradeoffRecord> records =
        cfg.scenario == "development" ? harness::run_development_pipeline(cfg)
                                      : harness::run_deployment_pipeline(cfg);
    print_records(records);
    std::printf("wrote %s/%s.csv\n", out.c_str(), cfg.scenario.c_str());
    return 0;
  }

  if (app.got_subcommand(c_adapt)) {
    harness::AdaptiveReport rep = harness::adaptive_robustness_experiment(cfg);
    std::printf("crafter   white: first %.4f last %.4f\n",
                rep.crafter_white.front(), rep.crafter_white.back());
    std::printf("crafter   black: first %.4f last %.4f\n",
                rep.crafter_black.front(), rep.crafter_black.back());
    std::printf("adv-learn black: first %.4f last %.4f\n",
                rep.advlearn_black.front(), rep.advlearn_black.back());
    std::printf("a3: single %.4f unshuffled %.4f shuffled %.4f\n",
                rep.a3_single, rep.a3_unshuffled, rep.a3_shuffled);
    std::printf("verdicts: crafter-contained=%d advlearn-overcome=%d "
                "a3-gain=%d a3-blocked=%d\n",
                rep.crafter_contained, rep.advlearn_overcome, rep.a3_gain,
                rep.a3_blocked);
    return 0;
  }

  if (app.got_subcommand(c_rep)) {
    const std::string path =
        csv_path.empty() ? out + "/deployment.csv" : csv_path;
    print_records(harness::read_records(path));
    return 0;
  }

  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}
