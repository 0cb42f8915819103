#include "fcraft/optim.hpp"

#include <cmath>

namespace fcraft::diffcore {

void adam_step(AdamState& st, Tensor& param, const Tensor& grad) {
  if (!param.same_shape(grad))
    throw std::invalid_argument("adam_step: param/grad shape mismatch");
  if (st.t == 0) {
    st.m = Tensor::zeros_like(param);
    st.v = Tensor::zeros_like(param);
  } else if (!st.m.same_shape(param)) {
    throw std::invalid_argument("adam_step: state was built for another shape");
  }
  st.t += 1;
  const double bc1 = 1.0 - std::pow(st.beta1, static_cast<double>(st.t));
  const double bc2 = 1.0 - std::pow(st.beta2, static_cast<double>(st.t));
  for (std::size_t i = 0; i < param.size(); ++i) {
    st.m[i] = st.beta1 * st.m[i] + (1.0 - st.beta1) * grad[i];
    st.v[i] = st.beta2 * st.v[i] + (1.0 - st.beta2) * grad[i] * grad[i];
    const double mhat = st.m[i] / bc1;
    const double vhat = st.v[i] / bc2;
    param[i] -= st.lr * mhat / (std::sqrt(vhat) + st.eps);
  }
}

void rmsprop_step(RmsPropState& st, Tensor& param, const Tensor& grad) {
  if (!param.same_shape(grad))
    throw std::invalid_argument("rmsprop_step: param/grad shape mismatch");
  if (!st.initialized) {
    st.sq = Tensor::zeros_like(param);
    st.initialized = true;
  } else if (!st.sq.same_shape(param)) {
    throw std::invalid_argument("rmsprop_step: state was built for another shape");
  }
  for (std::size_t i = 0; i < param.size(); ++i) {
    st.sq[i] = st.alpha * st.sq[i] + (1.0 - st.alpha) * grad[i] * grad[i];
    param[i] -= st.lr * grad[i] / (std::sqrt(st.sq[i]) + st.eps);
  }
}

}  // namespace fcraft::diffcore
