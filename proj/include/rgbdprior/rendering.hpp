#pragma once

#include <cmath>
#include <vector>

#include "rgbdprior/camera.hpp"
#include "rgbdprior/common.hpp"
#include "rgbdprior/field.hpp"
#include "rgbdprior/patch.hpp"
#include "rgbdprior/tensor.hpp"

namespace rgbdprior::render {

// Samples along one ray with everything compositing produces for it. t values
// are Euclidean distances along the unit direction; the segment length of the
// last sample reaches to t_far.
template <typename S>
struct RaySampleBatch {
  Vec3<S> origin = Vec3<S>::Zero();
  Vec3<S> dir = -Vec3<S>::UnitZ();
  S t_near = S(0), t_far = S(1);
  ArrX<S> t;      // N strictly increasing positions
  ArrX<S> sigma;  // N densities
  MatX<S> color;  // 3 x N sample colors
  // Filled by composite():
  ArrX<S> delta;   // segment lengths
  ArrX<S> alpha;   // 1 - exp(-sigma * delta)
  ArrX<S> trans;   // T_i before sample i; trans[0] = 1
  ArrX<S> weight;  // trans * alpha
  S trans_end = S(1);  // transmittance after the last sample
};

template <typename S>
struct RenderResult {
  Vec3<S> C = Vec3<S>::Zero();
  S D = S(0);
  S weight_sum = S(0);
};

// Stratified positions covering [t_near, t_far]: bin centers when jitter is
// off, else uniform draws within each bin.
template <typename S>
ArrX<S> sample_ray(S t_near, S t_far, int n_samples, bool jitter, Rng& rng) {
  check(n_samples >= 2, "sample_ray needs at least 2 samples");
  check(t_near > S(0) && t_near < t_far, "sample_ray needs 0 < t_near < t_far");
  ArrX<S> t(n_samples);
  const S bin = (t_far - t_near) / S(n_samples);
  for (int i = 0; i < n_samples; ++i) {
    const S u = jitter ? S(rng.uniform()) : S(0.5);
    t[i] = t_near + (S(i) + u) * bin;
  }
  return t;
}

// Discrete alpha compositing. Plain ascending loops on purpose: oracle tests
// compare against a step-by-step reimplementation and expect identical
// floating-point results.
template <typename S>
RenderResult<S> composite(RaySampleBatch<S>& batch, const Vec3<S>& c_bg) {
  const Eigen::Index n = batch.t.size();
  check(n > 0 && batch.sigma.size() == n && batch.color.cols() == n,
        "composite: inconsistent sample batch");
  batch.delta.resize(n);
  batch.alpha.resize(n);
  batch.trans.resize(n);
  batch.weight.resize(n);

  RenderResult<S> res;
  S T = S(1);
  S wt = S(0);
  Vec3<S> C = Vec3<S>::Zero();
  for (Eigen::Index i = 0; i < n; ++i) {
    batch.delta[i] = (i + 1 < n) ? batch.t[i + 1] - batch.t[i]
                                 : batch.t_far - batch.t[i];
    batch.alpha[i] = S(1) - std::exp(-batch.sigma[i] * batch.delta[i]);
    batch.trans[i] = T;
    const S w = T * batch.alpha[i];
    batch.weight[i] = w;
    res.weight_sum += w;
    wt += w * batch.t[i];
    C[0] += w * batch.color(0, i);
    C[1] += w * batch.color(1, i);
    C[2] += w * batch.color(2, i);
    T = T * (S(1) - batch.alpha[i]);
  }
  batch.trans_end = T;
  C[0] += (S(1) - res.weight_sum) * c_bg[0];
  C[1] += (S(1) - res.weight_sum) * c_bg[1];
  C[2] += (S(1) - res.weight_sum) * c_bg[2];
  res.C = C;
  // Empty-space guard: keep expected depth finite where nothing absorbs.
  res.D = res.weight_sum < S(1e-6) ? batch.t_far : wt / res.weight_sum;
  return res;
}

template <typename S>
struct CompositeGrad {
  ArrX<S> dsigma;  // N
  MatX<S> dcolor;  // 3 x N
};

// Backpropagates dL/dC, dL/dD and a direct per-sample dL/dw to densities and
// colors. Runs in O(N) using a suffix sum over downstream weight gradients.
template <typename S>
CompositeGrad<S> composite_backward(const RaySampleBatch<S>& batch,
                                    const RenderResult<S>& res,
                                    const Vec3<S>& c_bg, const Vec3<S>& dC,
                                    S dD, const ArrX<S>* dw_direct = nullptr) {
  const Eigen::Index n = batch.t.size();
  CompositeGrad<S> g;
  g.dsigma = ArrX<S>::Zero(n);
  g.dcolor = MatX<S>::Zero(3, n);

  const bool depth_live = res.weight_sum >= S(1e-6);
  ArrX<S> gw(n);  // total dL/dw_i
  for (Eigen::Index i = 0; i < n; ++i) {
    S v = (batch.color.col(i) - c_bg).dot(dC);
    if (depth_live) v += dD * (batch.t[i] - res.D) / res.weight_sum;
    if (dw_direct) v += (*dw_direct)[i];
    gw[i] = v;
    g.dcolor.col(i) = batch.weight[i] * dC;
  }
  // suffix[i] = sum_{j >= i} gw_j w_j
  S suffix = S(0);
  for (Eigen::Index i = n - 1; i >= 0; --i) {
    const S T_next = (i + 1 < n) ? batch.trans[i + 1] : batch.trans_end;
    g.dsigma[i] = batch.delta[i] * (gw[i] * T_next - suffix);
    suffix += gw[i] * batch.weight[i];
  }
  return g;
}

// --- field-backed rendering ----------------------------------------------------

template <typename S>
uint64_t pixel_stream_key(int x, int y) {
  return (uint64_t(uint32_t(y)) << 32) | uint64_t(uint32_t(x));
}

// Renders one pixel; consumes rng only for stratification jitter.
template <typename S>
RenderResult<S> render_pixel(const fields::RadianceField<S>& field,
                             const CameraPose<S>& camera, int x, int y,
                             int samples_per_ray, bool jitter, Rng rng,
                             RaySampleBatch<S>* out_batch = nullptr) {
  const Ray<S> ray = camera.pixel_center_ray(x, y);
  RaySampleBatch<S> batch;
  batch.origin = ray.origin;
  batch.dir = ray.dir;
  batch.t_near = camera.near;
  batch.t_far = camera.far;
  batch.t = sample_ray(batch.t_near, batch.t_far, samples_per_ray, jitter, rng);

  const Eigen::Index n = batch.t.size();
  MatX<S> pts(3, n), sh(16, n);
  const Eigen::Matrix<S, 16, 1> shd = fields::sh16<S>(batch.dir);
  for (Eigen::Index i = 0; i < n; ++i) {
    pts.col(i) = batch.origin + batch.t[i] * batch.dir;
    sh.col(i) = shd;
  }
  batch.sigma = field.density_forward(pts);
  batch.color = field.color_forward(pts, sh);
  RenderResult<S> res = composite(batch, field.background());
  if (out_batch) *out_batch = std::move(batch);
  return res;
}

// Recomputes the field forward pass for one ray and pushes per-sample
// gradients into the field parameters.
template <typename S>
void ray_backward(fields::RadianceField<S>& field,
                  const RaySampleBatch<S>& batch, const CompositeGrad<S>& g) {
  const Eigen::Index n = batch.t.size();
  MatX<S> pts(3, n), sh(16, n);
  const Eigen::Matrix<S, 16, 1> shd = fields::sh16<S>(batch.dir);
  for (Eigen::Index i = 0; i < n; ++i) {
    pts.col(i) = batch.origin + batch.t[i] * batch.dir;
    sh.col(i) = shd;
  }
  typename fields::RadianceField<S>::DensityWs dws;
  field.density_forward(pts, &dws);
  field.density_backward(dws, g.dsigma);
  typename fields::RadianceField<S>::ColorWs cws;
  field.color_forward(pts, sh, &cws);
  field.color_backward(cws, g.dcolor);
}

// A rendered pixel window with everything needed for backpropagation.
template <typename S>
struct PatchRender {
  int x0 = 0, y0 = 0, side = 0;
  ddm::RGBDPatch<S> patch;
  std::vector<RaySampleBatch<S>> rays;      // row-major over the window
  std::vector<RenderResult<S>> results;
};

// Renders a P x P pixel window into an RGBD patch. Each pixel uses an rng
// stream forked from (rng, absolute pixel position), so a patch render equals
// the matching per-pixel renders exactly.
template <typename S>
PatchRender<S> render_patch(const fields::RadianceField<S>& field,
                            const CameraPose<S>& camera, int x0, int y0,
                            int side, int samples_per_ray, S scene_scale,
                            bool jitter, const Rng& rng) {
  check(camera.fx != S(0) && camera.fy != S(0),
        "render_patch: degenerate camera intrinsics");
  check(x0 >= 0 && y0 >= 0 && x0 + side <= camera.width &&
            y0 + side <= camera.height,
        "render_patch: window outside image plane");
  PatchRender<S> pr;
  pr.x0 = x0;
  pr.y0 = y0;
  pr.side = side;
  pr.patch = ddm::RGBDPatch<S>(side);
  pr.rays.resize(size_t(side) * side);
  pr.results.resize(size_t(side) * side);
  for (int py = 0; py < side; ++py) {
    for (int px = 0; px < side; ++px) {
      const int x = x0 + px, y = y0 + py;
      const size_t idx = size_t(py) * side + px;
      pr.results[idx] =
          render_pixel(field, camera, x, y, samples_per_ray, jitter,
                       rng.fork(pixel_stream_key<S>(x, y)), &pr.rays[idx]);
      pr.patch.set_rgb(py, px, pr.results[idx].C);
      pr.patch.set_depth(py, px, pr.results[idx].D, scene_scale);
    }
  }
  return pr;
}

// Backpropagates a gradient on the patch values (4 x P x P tensor layout,
// RGB channels in [-1,1] convention and encoded depth) into the field.
template <typename S>
void patch_backward(fields::RadianceField<S>& field, const PatchRender<S>& pr,
                    const Tensor3<S>& dpatch, S scene_scale) {
  const int side = pr.side;
  check(dpatch.c == 4 && dpatch.h == side && dpatch.w == side,
        "patch_backward: gradient shape mismatch");
  for (int py = 0; py < side; ++py) {
    for (int px = 0; px < side; ++px) {
      const size_t idx = size_t(py) * side + px;
      const RenderResult<S>& res = pr.results[idx];
      // Patch RGB = 2 C - 1.
      const Vec3<S> dC(S(2) * dpatch.at(0, py, px),
                       S(2) * dpatch.at(1, py, px),
                       S(2) * dpatch.at(2, py, px));
      const S dD =
          dpatch.at(3, py, px) * ddm::encode_depth_grad(res.D, scene_scale);
      const CompositeGrad<S> g = composite_backward(
          pr.rays[idx], res, field.background(), dC, dD, (const ArrX<S>*)nullptr);
      ray_backward(field, pr.rays[idx], g);
    }
  }
}

// Full-frame render at pixel centers (no jitter); returns RGB image and the
// expected-depth map.
template <typename S>
void render_image(const fields::RadianceField<S>& field,
                  const CameraPose<S>& camera, int samples_per_ray,
                  Tensor3<S>& image, Eigen::ArrayXX<S>& depth) {
  image = Tensor3<S>(3, camera.height, camera.width);
  depth.resize(camera.height, camera.width);
  Rng rng(0);
  for (int y = 0; y < camera.height; ++y) {
    for (int x = 0; x < camera.width; ++x) {
      const RenderResult<S> res =
          render_pixel(field, camera, x, y, samples_per_ray, false, rng);
      for (int c = 0; c < 3; ++c) image.at(c, y, x) = res.C[c];
      depth(y, x) = res.D;
    }
  }
}

}  // namespace rgbdprior::render
