#pragma once

#include <cmath>
#include <vector>

#include "rgbdprior/common.hpp"
#include "rgbdprior/ddm_net.hpp"
#include "rgbdprior/io.hpp"
#include "rgbdprior/patch.hpp"
#include "rgbdprior/tensor.hpp"

namespace rgbdprior::ddm {

// Discrete diffusion schedule; arrays are 0-based, index tau-1 holds the
// values for step tau in 1..T_steps.
template <typename S>
struct NoiseSchedule {
  int T_steps = 0;
  ArrX<S> beta, alpha, alpha_bar, beta_tilde;

  static NoiseSchedule linear(int T = 1000, double beta_1 = 1e-4,
                              double beta_T = 2e-2) {
    check(T >= 1, "schedule needs at least one step");
    NoiseSchedule s;
    s.T_steps = T;
    s.beta.resize(T);
    s.alpha.resize(T);
    s.alpha_bar.resize(T);
    s.beta_tilde.resize(T);
    S prod = S(1);
    for (int i = 0; i < T; ++i) {
      const S b = T == 1 ? S(beta_1)
                         : S(beta_1 + (beta_T - beta_1) * double(i) / (T - 1));
      const S prev_bar = prod;
      s.beta[i] = b;
      s.alpha[i] = S(1) - b;
      prod *= s.alpha[i];
      s.alpha_bar[i] = prod;
      // beta_tilde_1 has an empty posterior (alpha_bar_0 = 1); we pin it to
      // beta_1, the variance actually usable at the final sampling step.
      s.beta_tilde[i] =
          i == 0 ? b : (S(1) - prev_bar) * b / (S(1) - s.alpha_bar[i]);
    }
    return s;
  }

  static NoiseSchedule from_beta(const ArrX<S>& beta) {
    NoiseSchedule s;
    s.T_steps = int(beta.size());
    s.beta = beta;
    s.alpha.resize(s.T_steps);
    s.alpha_bar.resize(s.T_steps);
    s.beta_tilde.resize(s.T_steps);
    S prod = S(1);
    for (int i = 0; i < s.T_steps; ++i) {
      const S prev_bar = prod;
      s.alpha[i] = S(1) - beta[i];
      prod *= s.alpha[i];
      s.alpha_bar[i] = prod;
      s.beta_tilde[i] = i == 0 ? beta[i]
                               : (S(1) - prev_bar) * beta[i] /
                                     (S(1) - s.alpha_bar[i]);
    }
    return s;
  }

  void check_tau(int tau) const {
    check(tau >= 1 && tau <= T_steps, "diffusion step index out of range");
  }

  // The per-sample loss weight beta / (2 alpha (1 - alpha_bar)).
  S loss_weight(int tau) const {
    check_tau(tau);
    return beta[tau - 1] /
           (S(2) * alpha[tau - 1] * (S(1) - alpha_bar[tau - 1]));
  }
};

// Maps the trainer's continuous tau in [0,1] onto a discrete step index;
// tau = 0 still engages the mildest noise level.
template <typename S>
int tau_discretize(S tau_continuous, int T_steps) {
  check(tau_continuous >= S(0) && tau_continuous <= S(1),
        "continuous tau must lie in [0,1]");
  const long idx = std::lround(double(tau_continuous) * T_steps);
  return int(std::min<long>(std::max<long>(idx, 1), T_steps));
}

// sqrt(alpha_bar) x0 + sqrt(1 - alpha_bar) eps, elementwise over any array.
template <typename S>
MatX<S> q_sample(const NoiseSchedule<S>& sched, const MatX<S>& x0, int tau,
                 const MatX<S>& eps) {
  sched.check_tau(tau);
  check(x0.rows() == eps.rows() && x0.cols() == eps.cols(),
        "q_sample: shape mismatch");
  const S ab = sched.alpha_bar[tau - 1];
  return std::sqrt(ab) * x0 + std::sqrt(S(1) - ab) * eps;
}

// Mean of the reverse transition: (x_tau - beta/sqrt(1-alpha_bar) eps_hat) /
// sqrt(alpha).
template <typename S>
MatX<S> posterior_mean(const NoiseSchedule<S>& sched, const MatX<S>& x_tau,
                       const MatX<S>& eps_hat, int tau) {
  sched.check_tau(tau);
  check(x_tau.rows() == eps_hat.rows() && x_tau.cols() == eps_hat.cols(),
        "posterior_mean: shape mismatch");
  const S ab = sched.alpha_bar[tau - 1];
  const S coeff = sched.beta[tau - 1] / std::sqrt(S(1) - ab);
  return (x_tau - coeff * eps_hat) / std::sqrt(sched.alpha[tau - 1]);
}

// Loss value for already-evaluated predictions: mean over the batch of
// w(tau) * ||eps - eps_hat||_2 (unsquared norm over each whole patch).
template <typename S>
S weighted_eps_loss(const NoiseSchedule<S>& sched, const std::vector<int>& taus,
                    const MatX<S>& eps, const MatX<S>& eps_hat, int B) {
  check(B > 0, "weighted_eps_loss: empty batch");
  const Eigen::Index per = eps.cols() / B;
  S total = S(0);
  for (int b = 0; b < B; ++b) {
    const S norm =
        (eps.middleCols(b * per, per) - eps_hat.middleCols(b * per, per))
            .norm();
    total += sched.loss_weight(taus[size_t(b)]) * norm;
  }
  return total / S(B);
}

// One training-loss evaluation over a batch of clean patches
// (x0: C x (B*P*P)). Draws tau and eps from rng; when train is true,
// parameter gradients accumulate into the model. Batches are processed in
// deterministic micro-batches to bound activation memory.
template <typename S>
S ddm_training_loss(DenoiserNetwork<S>& model, const NoiseSchedule<S>& sched,
                    const MatX<S>& x0, int B, int P, Rng& rng,
                    bool train = false, int microbatch = 8) {
  check(B > 0 && x0.cols() == Eigen::Index(B) * P * P,
        "ddm_training_loss: bad batch shape");
  std::vector<int> taus(B);
  for (int b = 0; b < B; ++b) taus[size_t(b)] = 1 + int(rng.uniform_int(uint64_t(sched.T_steps)));
  MatX<S> eps(x0.rows(), x0.cols());
  for (Eigen::Index i = 0; i < eps.size(); ++i)
    eps.data()[i] = S(rng.normal());

  const Eigen::Index per = Eigen::Index(P) * P;
  S total = S(0);
  for (int start = 0; start < B; start += microbatch) {
    const int mb = std::min(microbatch, B - start);
    MatX<S> xt(x0.rows(), Eigen::Index(mb) * per);
    ArrX<S> mb_taus(mb);
    for (int j = 0; j < mb; ++j) {
      const int tau = taus[size_t(start + j)];
      mb_taus[j] = S(tau);
      xt.middleCols(Eigen::Index(j) * per, per) =
          q_sample(sched,
                   MatX<S>(x0.middleCols(Eigen::Index(start + j) * per, per)),
                   tau,
                   MatX<S>(eps.middleCols(Eigen::Index(start + j) * per, per)));
    }
    typename DenoiserNetwork<S>::Cache cache;
    const MatX<S> eps_hat =
        model.forward(xt, mb_taus, mb, P, train ? &cache : nullptr);
    MatX<S> dout = MatX<S>::Zero(eps_hat.rows(), eps_hat.cols());
    for (int j = 0; j < mb; ++j) {
      const int tau = taus[size_t(start + j)];
      const MatX<S> resid =
          eps.middleCols(Eigen::Index(start + j) * per, per) -
          eps_hat.middleCols(Eigen::Index(j) * per, per);
      const S norm = resid.norm();
      const S w = sched.loss_weight(tau);
      total += w * norm;
      if (train && norm > S(0))
        dout.middleCols(Eigen::Index(j) * per, per) =
            resid * (-w / (norm * S(B)));
    }
    if (train) model.backward(cache, dout);
  }
  return total / S(B);
}

// Ancestral sampling from pure noise; returns n patches clamped to [-1,1].
template <typename S>
std::vector<RGBDPatch<S>> ancestral_sample(const DenoiserNetwork<S>& model,
                                           const NoiseSchedule<S>& sched,
                                           int n, int P, Rng rng,
                                           int microbatch = 16) {
  check(n > 0, "ancestral_sample: need n >= 1");
  const int C = model.config().in_channels;
  const Eigen::Index per = Eigen::Index(P) * P;
  std::vector<RGBDPatch<S>> out;
  out.reserve(size_t(n));
  for (int start = 0; start < n; start += microbatch) {
    const int mb = std::min(microbatch, n - start);
    Rng chunk_rng = rng.fork(0xabcdULL, uint64_t(start));
    MatX<S> x(C, Eigen::Index(mb) * per);
    for (Eigen::Index i = 0; i < x.size(); ++i)
      x.data()[i] = S(chunk_rng.normal());
    for (int tau = sched.T_steps; tau >= 1; --tau) {
      const ArrX<S> taus = ArrX<S>::Constant(mb, S(tau));
      const MatX<S> eps_hat = model.forward(x, taus, mb, P);
      x = posterior_mean(sched, x, eps_hat, tau);
      if (tau > 1) {
        const S sd = std::sqrt(sched.beta_tilde[tau - 1]);
        for (Eigen::Index i = 0; i < x.size(); ++i)
          x.data()[i] += sd * S(chunk_rng.normal());
      }
    }
    for (int j = 0; j < mb; ++j) {
      RGBDPatch<S> p(P);
      // Patch storage is channel-planar: plane c maps to matrix column c.
      Eigen::Map<MatX<S>>(p.values.data.data(), per, C) =
          x.middleCols(Eigen::Index(j) * per, per)
              .cwiseMax(S(-1))
              .cwiseMin(S(1))
              .transpose();
      out.push_back(std::move(p));
    }
  }
  return out;
}

// Noise prediction rescaled to unit RMS independently for the RGB sub-block
// and the depth sub-block; sub-blocks with RMS below 1e-12 come back as
// zeros. The negated result is the ascent direction on the patch
// log-density.
template <typename S>
Tensor3<S> score_gradient(const DenoiserNetwork<S>& model,
                          const NoiseSchedule<S>& sched,
                          const RGBDPatch<S>& patch, S tau_continuous,
                          S* raw_rms = nullptr) {
  check(patch.values.data.isFinite().all(),
        "score_gradient: non-finite patch");
  const int P = patch.side();
  const Eigen::Index per = Eigen::Index(P) * P;
  const int tau = tau_discretize(tau_continuous, sched.T_steps);
  // Patch storage is channel-planar: plane c maps to matrix column c.
  const MatX<S> x =
      Eigen::Map<const MatX<S>>(patch.values.data.data(), per, 4).transpose();
  const ArrX<S> taus = ArrX<S>::Constant(1, S(tau));
  MatX<S> eps_hat = model.forward(x, taus, 1, P);
  if (raw_rms)
    *raw_rms = std::sqrt(eps_hat.squaredNorm() / S(eps_hat.size()));

  Tensor3<S> g(4, P, P);
  const S rgb_rms = std::sqrt(eps_hat.topRows(3).squaredNorm() / S(3 * per));
  const S depth_rms =
      std::sqrt(eps_hat.bottomRows(1).squaredNorm() / S(per));
  if (rgb_rms >= S(1e-12)) eps_hat.topRows(3) /= rgb_rms;
  else eps_hat.topRows(3).setZero();
  if (depth_rms >= S(1e-12)) eps_hat.bottomRows(1) /= depth_rms;
  else eps_hat.bottomRows(1).setZero();
  Eigen::Map<MatX<S>>(g.data.data(), per, 4) = eps_hat.transpose();
  return g;
}

// --- checkpointing -----------------------------------------------------------------

inline constexpr const char* kDdmCheckpointTag = "ddm-v1";

template <typename S>
Checkpoint ddm_to_checkpoint(DenoiserNetwork<S>& model,
                             const NoiseSchedule<S>& sched, int patch_side,
                             double scene_scale) {
  Checkpoint ckpt;
  ckpt.tag = kDdmCheckpointTag;
  ckpt.meta = {{"config", model.config().to_json()},
               {"T_steps", sched.T_steps},
               {"patch_side", patch_side},
               {"scene_scale", scene_scale}};
  for (const auto& v : model.param_views()) {
    NamedTensor t;
    t.shape = {v.size};
    t.data = Eigen::Map<const ArrX<S>>(v.value, v.size).template cast<float>();
    ckpt.tensors.emplace(v.name, std::move(t));
  }
  NamedTensor beta;
  beta.shape = {sched.T_steps};
  beta.data = sched.beta.template cast<float>();
  ckpt.tensors.emplace("schedule.beta", std::move(beta));
  return ckpt;
}

template <typename S>
struct DdmModel {
  DenoiserNetwork<S> net;
  NoiseSchedule<S> schedule;
  int patch_side = 48;
  S scene_scale = S(1);
};

template <typename S>
DdmModel<S> ddm_from_checkpoint(const Checkpoint& ckpt) {
  check(ckpt.tag == kDdmCheckpointTag,
        "expected a '" + std::string(kDdmCheckpointTag) + "' checkpoint, got '" +
            ckpt.tag + "'");
  DdmModel<S> m;
  m.net = DenoiserNetwork<S>(
      DenoiserConfig::from_json(ckpt.meta.at("config")), Rng(1));
  m.patch_side = ckpt.meta.at("patch_side");
  m.scene_scale = S(ckpt.meta.at("scene_scale").get<double>());
  const auto bit = ckpt.tensors.find("schedule.beta");
  check(bit != ckpt.tensors.end(), "checkpoint missing schedule.beta");
  m.schedule =
      NoiseSchedule<S>::from_beta(bit->second.data.template cast<S>());
  check(m.schedule.T_steps == int(ckpt.meta.at("T_steps").get<int>()),
        "schedule length disagrees with metadata");
  for (auto& v : m.net.param_views()) {
    const auto it = ckpt.tensors.find(v.name);
    check(it != ckpt.tensors.end(), "checkpoint missing tensor " + v.name);
    check(it->second.data.size() == v.size,
          "checkpoint tensor size mismatch for " + v.name);
    Eigen::Map<ArrX<S>>(v.value, v.size) = it->second.data.template cast<S>();
  }
  return m;
}

}  // namespace rgbdprior::ddm
