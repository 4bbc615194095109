#pragma once

#include <cmath>
#include <utility>
#include <vector>

#include "rgbdprior/common.hpp"
#include "rgbdprior/params.hpp"

namespace rgbdprior::train {

struct AdamConfig {
  double lr = 1e-2;  // base rate; each view's lr_mult scales it
  double beta1 = 0.9;
  double beta2 = 0.99;
  double eps = 1e-10;
};

// Adaptive-moment descent over a fixed set of parameter views. The views alias
// externally owned storage, so the owning model must outlive the optimizer.
template <typename S>
class Adam {
 public:
  Adam(std::vector<ParamView<S>> views, AdamConfig cfg)
      : views_(std::move(views)), cfg_(cfg) {
    for (const auto& v : views_) {
      m_.push_back(ArrX<S>::Zero(v.size));
      v_.push_back(ArrX<S>::Zero(v.size));
    }
  }

  // One update from the gradients currently stored in the views; lr_scale
  // multiplies the learning rate (schedule decay).
  void step(S lr_scale = S(1)) {
    ++t_;
    const S bc1 = S(1) - S(std::pow(cfg_.beta1, double(t_)));
    const S bc2 = S(1) - S(std::pow(cfg_.beta2, double(t_)));
    const S b1 = S(cfg_.beta1), b2 = S(cfg_.beta2), eps = S(cfg_.eps);
    for (size_t k = 0; k < views_.size(); ++k) {
      const auto& view = views_[k];
      Eigen::Map<ArrX<S>> value(view.value, view.size);
      Eigen::Map<const ArrX<S>> grad(view.grad, view.size);
      m_[k] = b1 * m_[k] + (S(1) - b1) * grad;
      v_[k] = b2 * v_[k] + (S(1) - b2) * grad.square();
      const S rate = S(cfg_.lr) * S(view.lr_mult) * lr_scale;
      value -= rate * (m_[k] / bc1) / ((v_[k] / bc2).sqrt() + eps);
    }
  }

  int64_t updates() const { return t_; }
  const std::vector<ParamView<S>>& views() const { return views_; }

 private:
  std::vector<ParamView<S>> views_;
  AdamConfig cfg_;
  std::vector<ArrX<S>> m_, v_;
  int64_t t_ = 0;
};

// Cosine decay of the learning-rate scale from 1 at step 0 to 0 at the final
// step.
inline double cosine_lr_scale(int step, int total_steps) {
  if (total_steps <= 1) return 1.0;
  const double t = std::min(std::max(double(step) / double(total_steps), 0.0), 1.0);
  return 0.5 * (1.0 + std::cos(M_PI * t));
}

}  // namespace rgbdprior::train
