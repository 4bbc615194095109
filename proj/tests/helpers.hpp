// Shared fixtures for the test suites: random ray batches, independent
// compositing oracles, and finite-difference utilities.
#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "rgbdprior/common.hpp"
#include "rgbdprior/field.hpp"
#include "rgbdprior/rendering.hpp"
#include "rgbdprior/scene.hpp"

namespace testutil {

using rgbdprior::Rng;
using rgbdprior::Vec3;
using rgbdprior::ArrX;
using rgbdprior::MatX;

// Random ray batch with strictly increasing positive t and bounded densities.
inline rgbdprior::render::RaySampleBatch<double> random_batch(Rng& rng, int n) {
  rgbdprior::render::RaySampleBatch<double> b;
  b.t_near = 0.5 + rng.uniform();
  b.t.resize(n);
  double t = b.t_near;
  for (int i = 0; i < n; ++i) {
    t += 0.01 + rng.uniform() * 0.3;
    b.t[i] = t;
  }
  b.t_far = t + 0.01 + rng.uniform() * 0.3;
  b.sigma.resize(n);
  b.color.resize(3, n);
  for (int i = 0; i < n; ++i) {
    b.sigma[i] = rng.uniform() * 3.0;
    for (int c = 0; c < 3; ++c) b.color(c, i) = rng.uniform();
  }
  return b;
}

// Step-by-step reimplementation of discrete alpha compositing, written
// independently of the library code path.
struct OracleRender {
  ArrX<double> delta, alpha, trans, weight;
  Vec3<double> C;
  double D = 0, weight_sum = 0;
};

inline OracleRender oracle_composite(
    const rgbdprior::render::RaySampleBatch<double>& in,
    const Vec3<double>& c_bg) {
  const int n = int(in.t.size());
  OracleRender o;
  o.delta.resize(n);
  o.alpha.resize(n);
  o.trans.resize(n);
  o.weight.resize(n);
  double T = 1.0, wsum = 0.0, wt = 0.0;
  Vec3<double> C = Vec3<double>::Zero();
  for (int i = 0; i < n; ++i) {
    o.delta[i] = (i + 1 < n) ? in.t[i + 1] - in.t[i] : in.t_far - in.t[i];
    o.alpha[i] = 1.0 - std::exp(-in.sigma[i] * o.delta[i]);
    o.trans[i] = T;
    const double w = T * o.alpha[i];
    o.weight[i] = w;
    wsum += w;
    wt += w * in.t[i];
    C[0] += w * in.color(0, i);
    C[1] += w * in.color(1, i);
    C[2] += w * in.color(2, i);
    T = T * (1.0 - o.alpha[i]);
  }
  C[0] += (1.0 - wsum) * c_bg[0];
  C[1] += (1.0 - wsum) * c_bg[1];
  C[2] += (1.0 - wsum) * c_bg[2];
  o.C = C;
  o.weight_sum = wsum;
  o.D = wsum < 1e-6 ? in.t_far : wt / wsum;
  return o;
}

// Central finite difference of f at x with step h.
inline double central_diff(const std::function<double(double)>& f, double x,
                           double h) {
  return (f(x + h) - f(x - h)) / (2.0 * h);
}

inline double rel_err(double analytic, double fd) {
  const double denom = std::max({std::abs(analytic), std::abs(fd), 1e-6});
  return std::abs(analytic - fd) / denom;
}

// Moves parameters away from zero init before finite-difference probes. A
// fresh network has zero biases and ~1e-4 features, so ReLU pre-activations
// sit within the probe step of the hinge and numeric derivatives land on the
// wrong side.
template <typename S>
void jitter_params(std::vector<rgbdprior::ParamView<S>> views,
                   rgbdprior::Rng rng) {
  for (auto& v : views)
    for (Eigen::Index i = 0; i < v.size; ++i)
      v.value[i] += S((rng.uniform() - 0.5) * 0.4);
}

// Small field for gradient tests: low-resolution grid, narrow network.
inline rgbdprior::fields::FieldConfig tiny_field_config() {
  rgbdprior::fields::FieldConfig cfg;
  cfg.grid.levels = 2;
  cfg.grid.base_res = 6;
  cfg.grid.growth = 1.5;
  cfg.grid.feats = 2;
  cfg.hidden = 12;
  return cfg;
}

// Small demo scene shared by trainer/data tests.
inline rgbdprior::data::SceneDataset tiny_scene(uint64_t seed = 7,
                                                int views = 4, int size = 48) {
  return rgbdprior::data::generate_synthetic_scene(
      rgbdprior::data::make_demo_scene(seed, views, size));
}

}  // namespace testutil
