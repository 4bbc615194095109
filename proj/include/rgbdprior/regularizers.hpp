#pragma once

#include <cmath>
#include <vector>

#include "rgbdprior/camera.hpp"
#include "rgbdprior/common.hpp"
#include "rgbdprior/rendering.hpp"

namespace rgbdprior::reg {

// Mean squared error over pixels and channels.
template <typename S>
S photometric_loss(const MatX<S>& rendered, const MatX<S>& target) {
  check(rendered.rows() == target.rows() && rendered.cols() == target.cols(),
        "photometric_loss: shape mismatch");
  check(rendered.size() > 0, "photometric_loss: empty input");
  return (rendered - target).squaredNorm() / S(rendered.size());
}

// d(photometric_loss)/d(rendered).
template <typename S>
MatX<S> photometric_loss_backward(const MatX<S>& rendered,
                                  const MatX<S>& target) {
  return (rendered - target) * (S(2) / S(rendered.size()));
}

// Depth-normalized distortion: (1/D) [ sum_ij w_i w_j |m_i - m_j|
//   + (1/3) sum_i w_i^2 delta_i ] with bin midpoints m_i. The pairwise term
// is evaluated by the direct O(N^2) double sum: exact, and cheap at
// desk-scale sample counts.
template <typename S>
S distortion_loss(const render::RaySampleBatch<S>& batch, S D) {
  check(D > S(0), "distortion_loss: expected depth must be positive");
  const Eigen::Index n = batch.t.size();
  check(batch.weight.size() == n && batch.delta.size() == n,
        "distortion_loss: batch not composited");
  S pair = S(0), self = S(0);
  for (Eigen::Index i = 0; i < n; ++i) {
    const S mi = batch.t[i] + batch.delta[i] / S(2);
    for (Eigen::Index j = 0; j < n; ++j) {
      const S mj = batch.t[j] + batch.delta[j] / S(2);
      pair += batch.weight[i] * batch.weight[j] * std::abs(mi - mj);
    }
    self += batch.weight[i] * batch.weight[i] * batch.delta[i];
  }
  return (pair + self / S(3)) / D;
}

template <typename S>
struct DistortionGrad {
  ArrX<S> dweight;
  S dD = S(0);
};

// Gradient with respect to each w_i and to D, scaled by upstream dL.
template <typename S>
DistortionGrad<S> distortion_loss_backward(
    const render::RaySampleBatch<S>& batch, S D, S upstream = S(1)) {
  const Eigen::Index n = batch.t.size();
  DistortionGrad<S> g;
  g.dweight = ArrX<S>::Zero(n);
  S pair = S(0), self = S(0);
  for (Eigen::Index i = 0; i < n; ++i) {
    const S mi = batch.t[i] + batch.delta[i] / S(2);
    S row = S(0);
    for (Eigen::Index j = 0; j < n; ++j) {
      const S mj = batch.t[j] + batch.delta[j] / S(2);
      const S d = std::abs(mi - mj);
      row += batch.weight[j] * d;
      pair += batch.weight[i] * batch.weight[j] * d;
    }
    self += batch.weight[i] * batch.weight[i] * batch.delta[i];
    g.dweight[i] = (S(2) * row +
                    S(2) / S(3) * batch.weight[i] * batch.delta[i]) /
                   D * upstream;
  }
  g.dD = -(pair + self / S(3)) / (D * D) * upstream;
  return g;
}

// (1 - sum w_i)^2: pushes rays to be fully absorbed inside the scene.
template <typename S>
S foreground_loss(const render::RaySampleBatch<S>& batch) {
  return (S(1) - batch.weight.sum()) * (S(1) - batch.weight.sum());
}

template <typename S>
ArrX<S> foreground_loss_backward(const render::RaySampleBatch<S>& batch,
                                 S upstream = S(1)) {
  const S v = S(-2) * (S(1) - batch.weight.sum()) * upstream;
  return ArrX<S>::Constant(batch.weight.size(), v);
}

// --- frustum visibility ---------------------------------------------------------

template <typename S>
struct FrustumSet {
  std::vector<CameraPose<S>> cameras;
};

// Number of camera frustums containing x (projection inside the image extent,
// view depth within [near, far]; boundary points count as inside).
template <typename S>
int count_containing_frustums(const Vec3<S>& x, const FrustumSet<S>& frustums) {
  check(x.allFinite(), "count_containing_frustums: non-finite point");
  int n = 0;
  for (const auto& cam : frustums.cameras)
    if (cam.frustum_contains(x)) ++n;
  return n;
}

// Precomputed mask: 1 where a sample point is seen by at most one frustum.
// The mask is treated as a constant in differentiation.
template <typename S>
ArrX<S> frustum_mask(const std::vector<Vec3<S>>& points,
                     const FrustumSet<S>& frustums) {
  ArrX<S> mask(Eigen::Index(points.size()));
  for (size_t i = 0; i < points.size(); ++i)
    mask[i] = count_containing_frustums(points[i], frustums) <= 1 ? S(1) : S(0);
  return mask;
}

// sum_i w_i 1(n_i <= 1): penalizes density placed where too few training
// views can supervise it.
template <typename S>
S frustum_loss(const render::RaySampleBatch<S>& batch, const ArrX<S>& mask) {
  check(mask.size() == batch.weight.size(), "frustum_loss: mask size mismatch");
  return (batch.weight * mask).sum();
}

template <typename S>
ArrX<S> frustum_loss_backward(const ArrX<S>& mask, S upstream = S(1)) {
  return mask * upstream;
}

// lambda_fg L_fg + lambda_fr L_fr + lambda_dist L_dist + L_photo.
template <typename S>
S geometric_loss(S photo, S fg, S fr, S dist, S lambda_fg, S lambda_fr,
                 S lambda_dist) {
  check(lambda_fg >= S(0) && lambda_fr >= S(0) && lambda_dist >= S(0),
        "geometric_loss: negative weight");
  return lambda_fg * fg + lambda_fr * fr + lambda_dist * dist + photo;
}

}  // namespace rgbdprior::reg
