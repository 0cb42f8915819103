#pragma once

#include <cstdint>

#include "fcraft/tensor.hpp"

namespace fcraft::diffcore {

// Bias-corrected Adam. Defaults follow the common framework settings
// (lr 1e-3, betas 0.9/0.999, eps 1e-8).
struct AdamState {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::int64_t t = 0;
  Tensor m;  // first moment, lazily sized on the first step
  Tensor v;  // second moment

  explicit AdamState(double lr_ = 1e-3, double b1 = 0.9, double b2 = 0.999,
                     double eps_ = 1e-8)
      : lr(lr_), beta1(b1), beta2(b2), eps(eps_) {}
};

// One in-place update of param. Throws on shape mismatch between param, grad
// and any previously seen state.
void adam_step(AdamState& st, Tensor& param, const Tensor& grad);

// RMSProp with a running mean of squared gradients (alpha 0.99, eps 1e-8).
struct RmsPropState {
  double lr = 1e-3;
  double alpha = 0.99;
  double eps = 1e-8;
  bool initialized = false;
  Tensor sq;

  explicit RmsPropState(double lr_ = 1e-3, double alpha_ = 0.99,
                        double eps_ = 1e-8)
      : lr(lr_), alpha(alpha_), eps(eps_) {}
};

void rmsprop_step(RmsPropState& st, Tensor& param, const Tensor& grad);

}  // namespace fcraft::diffcore
