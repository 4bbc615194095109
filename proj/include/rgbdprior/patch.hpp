#pragma once

#include <cmath>

#include "rgbdprior/common.hpp"
#include "rgbdprior/tensor.hpp"

namespace rgbdprior::ddm {

// Bounded monotone depth encoding: e(D) = 2 s / (s + D) - 1 maps D = 0 to +1
// and D -> inf to -1, with s the scene scale.
template <typename S>
S encode_depth(S depth, S scene_scale) {
  return S(2) * scene_scale / (scene_scale + depth) - S(1);
}

// d e(D) / d D, for backpropagating through the encoding.
template <typename S>
S encode_depth_grad(S depth, S scene_scale) {
  const S denom = scene_scale + depth;
  return S(-2) * scene_scale / (denom * denom);
}

template <typename S>
S decode_depth(S encoded, S scene_scale) {
  return S(2) * scene_scale / (encoded + S(1)) - scene_scale;
}

// P x P x 4 patch: channels 0-2 hold RGB mapped affinely from [0,1] to
// [-1,1], channel 3 holds encoded depth. Stored channels-first.
template <typename S>
struct RGBDPatch {
  Tensor3<S> values;  // 4 x P x P

  RGBDPatch() = default;
  explicit RGBDPatch(int p) : values(4, p, p) {}

  int side() const { return values.h; }

  void set_rgb(int y, int x, const Vec3<S>& rgb01) {
    for (int c = 0; c < 3; ++c)
      values.at(c, y, x) = S(2) * rgb01[c] - S(1);
  }
  Vec3<S> rgb01(int y, int x) const {
    return Vec3<S>((values.at(0, y, x) + S(1)) / S(2),
                   (values.at(1, y, x) + S(1)) / S(2),
                   (values.at(2, y, x) + S(1)) / S(2));
  }
  void set_depth(int y, int x, S depth, S scene_scale) {
    values.at(3, y, x) = encode_depth(depth, scene_scale);
  }

  bool finite_in_range() const {
    return values.data.isFinite().all() &&
           (values.data >= S(-1)).all() && (values.data <= S(1)).all();
  }

  template <typename T>
  RGBDPatch<T> cast() const {
    RGBDPatch<T> out;
    out.values = values.template cast<T>();
    return out;
  }
};

using RGBDPatchf = RGBDPatch<float>;
using RGBDPatchd = RGBDPatch<double>;

}  // namespace rgbdprior::ddm
