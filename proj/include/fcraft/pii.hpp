#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "fcraft/nets.hpp"
#include "fcraft/tensor.hpp"

namespace fcraft::attacks {
struct InversionConfig;
}

namespace fcraft::pii {

// One evaluation cell: how well an attack did and what it cost the task.
struct MetricsRecord {
  double eval_acc = 0.0;
  double fsim = 0.0;
  double ssim = 0.0;
  double utility = 0.0;
  double epsilon = 0.0;
};

// Exact earth mover's distance between two equal-size, equal-weight point
// sets under the Euclidean ground metric: mean cost of the minimum-cost
// perfect matching (Hungarian algorithm). Rows are points.
double emd_exact(const Tensor& p, const Tensor& q);

struct EmdDualConfig {
  int steps = 300;
  std::size_t minibatch = 64;
  double gp_weight = 10.0;
  double lr = 1e-3;
  double beta1 = 0.5;
  double beta2 = 0.9;
};

// Kantorovich dual estimate: trains a fresh critic (architecture copied from
// critic_template, output layer zeroed so the step-0 estimate is exactly 0)
// to maximize mean D(p) - mean D(q) under a gradient penalty, then returns
// that difference over the full sets. Sizes may differ.
double emd_dual(const nets::LayerStack& critic_template, const Tensor& p,
                const Tensor& q, const EmdDualConfig& cfg, std::uint64_t seed);

// A feature-protection mechanism as seen by the metric: images in,
// protected features out.
using CraftFn = std::function<Tensor(const Tensor&)>;

struct EpsilonReport {
  double epsilon = 0.0;
  std::size_t n = 0;  // samples per side of the matching
};

// Worst-case perceptual leakage of a protection mechanism: crafts features
// for x_pvt, inverts them through gen white-box, and measures the exact EMD
// (scaled by 1/image_size) against equal-count prior images G(z_r). The
// inversion's initial latents and the prior latents share one derived stream,
// so a zero-iteration inversion reproduces the prior exactly and the metric
// vanishes, the calibration point for an uninformative mechanism. x_pub is
// the normalization reference for the prior's pixel statistics and should be
// pre-normalized to x_pvt (synthdata::normalize_to_reference).
EpsilonReport pii_epsilon(const CraftFn& craft_fn, const nets::LayerStack& enc,
                          const nets::LayerStack& gen, const Tensor& x_pvt,
                          const Tensor& x_pub,
                          const attacks::InversionConfig& inv_cfg,
                          std::uint64_t seed);

// Mean structural similarity over image rows, one global window per image,
// population moments, constants K1=0.01 K2=0.03 at dynamic range 1.
double ssim(const Tensor& a, const Tensor& b);

struct RecognitionReport {
  double eval_acc = 0.0;
  double fsim = 0.0;
};

// eval_acc: fraction of reconstructions the identity oracle assigns to the
// true identity. fsim: mean cosine similarity between the oracle's
// penultimate-layer features of reconstruction and original.
RecognitionReport recognition_metrics(const nets::LayerStack& id_oracle,
                                      const Tensor& reconstructed,
                                      const Tensor& originals,
                                      const std::vector<int>& true_ids);

// Mean Mann-Whitney AUC of head scores over attribute columns. Refuses a
// column with a single class.
double utility_score(const nets::LayerStack& task_head, const Tensor& features,
                     const Tensor& labels);

}  // namespace fcraft::pii
