#pragma once

#include <Eigen/Dense>
#include <cstdint>

#include "rgbdprior/common.hpp"

namespace rgbdprior {

// Dense channels-first image tensor (C x H x W), row-major within a channel.
template <typename S>
struct Tensor3 {
  int c = 0, h = 0, w = 0;
  ArrX<S> data;  // size c*h*w

  Tensor3() = default;
  Tensor3(int c_, int h_, int w_) : c(c_), h(h_), w(w_) {
    data = ArrX<S>::Zero(Eigen::Index(c_) * h_ * w_);
  }

  Eigen::Index size() const { return data.size(); }
  Eigen::Index plane() const { return Eigen::Index(h) * w; }

  S& at(int ci, int y, int x) { return data[(Eigen::Index(ci) * h + y) * w + x]; }
  S at(int ci, int y, int x) const { return data[(Eigen::Index(ci) * h + y) * w + x]; }

  Eigen::Map<ArrX<S>> channel(int ci) {
    return Eigen::Map<ArrX<S>>(data.data() + ci * plane(), plane());
  }
  Eigen::Map<const ArrX<S>> channel(int ci) const {
    return Eigen::Map<const ArrX<S>>(data.data() + ci * plane(), plane());
  }

  void set_zero() { data.setZero(); }

  template <typename T>
  Tensor3<T> cast() const {
    Tensor3<T> out(c, h, w);
    out.data = data.template cast<T>();
    return out;
  }
};

using Tensor3f = Tensor3<float>;
using Tensor3d = Tensor3<double>;

}  // namespace rgbdprior
