#pragma once

#include <string>
#include <vector>

#include "rgbdprior/common.hpp"

namespace rgbdprior {

// View into one named block of trainable parameters and its gradient
// accumulator. Blocks stay owned by the model objects; the optimizer only
// holds these views. lr_mult scales the optimizer's base learning rate.
template <typename S>
struct ParamView {
  std::string name;
  S* value = nullptr;
  S* grad = nullptr;
  Eigen::Index size = 0;
  S lr_mult = S(1);
};

template <typename S>
void zero_grads(const std::vector<ParamView<S>>& views) {
  for (const auto& v : views)
    Eigen::Map<ArrX<S>>(v.grad, v.size).setZero();
}

template <typename S>
bool grads_finite(const std::vector<ParamView<S>>& views) {
  for (const auto& v : views)
    if (!Eigen::Map<ArrX<S>>(v.grad, v.size).isFinite().all()) return false;
  return true;
}

template <typename S>
S grad_norm(const std::vector<ParamView<S>>& views) {
  S sq = S(0);
  for (const auto& v : views)
    sq += Eigen::Map<VecX<S>>(v.grad, v.size).squaredNorm();
  return std::sqrt(sq);
}

}  // namespace rgbdprior
