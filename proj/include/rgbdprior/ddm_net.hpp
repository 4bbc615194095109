#pragma once

#include <cmath>
#include <numeric>
#include <vector>

#include <json.hpp>

#include "rgbdprior/common.hpp"
#include "rgbdprior/params.hpp"

namespace rgbdprior::ddm {

// Activations are stored as C x (B*H*W) matrices, one contiguous H*W block
// per batch element (column index = b*H*W + y*W + x).

template <typename S>
inline S silu(S x) {
  return x / (S(1) + std::exp(-x));
}

template <typename S>
MatX<S> silu_forward(const MatX<S>& x) {
  return x.unaryExpr([](S v) { return silu(v); });
}

template <typename S>
MatX<S> silu_backward(const MatX<S>& x, const MatX<S>& dy) {
  return dy.binaryExpr(x, [](S g, S v) {
    const S s = S(1) / (S(1) + std::exp(-v));
    return g * s * (S(1) + v * (S(1) - s));
  });
}

// --- convolution ---------------------------------------------------------------

template <typename S>
class Conv2d {
 public:
  struct Cache {
    MatX<S> input;
    int B, H, W;
  };

  Conv2d() = default;
  Conv2d(int cin, int cout, int ksize, int stride)
      : cin_(cin), cout_(cout), k_(ksize), stride_(stride), pad_(ksize / 2) {
    W_ = MatX<S>::Zero(cout, cin * ksize * ksize);
    b_ = VecX<S>::Zero(cout);
    gW_ = MatX<S>::Zero(W_.rows(), W_.cols());
    gb_ = VecX<S>::Zero(cout);
  }

  void init(Rng& rng) {
    const S bound = std::sqrt(S(6) / S(W_.rows() + W_.cols()));
    for (Eigen::Index i = 0; i < W_.size(); ++i)
      W_.data()[i] = S(rng.uniform() * 2.0 - 1.0) * bound;
    b_.setZero();
  }
  void init_zero() {
    W_.setZero();
    b_.setZero();
  }

  int out_size(int n) const { return (n + 2 * pad_ - k_) / stride_ + 1; }
  int cout() const { return cout_; }

  MatX<S> forward(const MatX<S>& x, int B, int H, int W,
                  Cache* cache = nullptr) const {
    const int Ho = out_size(H), Wo = out_size(W);
    const MatX<S> col = im2col(x, B, H, W, Ho, Wo);
    MatX<S> y = W_ * col;
    y.colwise() += b_;
    if (cache) {
      cache->input = x;
      cache->B = B;
      cache->H = H;
      cache->W = W;
    }
    return y;
  }

  MatX<S> backward(const Cache& c, const MatX<S>& dy) {
    const int Ho = out_size(c.H), Wo = out_size(c.W);
    const MatX<S> col = im2col(c.input, c.B, c.H, c.W, Ho, Wo);
    gW_.noalias() += dy * col.transpose();
    gb_.noalias() += dy.rowwise().sum();
    const MatX<S> dcol = W_.transpose() * dy;
    return col2im(dcol, c.B, c.H, c.W, Ho, Wo);
  }

  void collect_params(const std::string& prefix,
                      std::vector<ParamView<S>>& out) {
    out.push_back({prefix + ".w", W_.data(), gW_.data(), W_.size(), S(1)});
    out.push_back({prefix + ".b", b_.data(), gb_.data(), b_.size(), S(1)});
  }

 private:
  MatX<S> im2col(const MatX<S>& x, int B, int H, int W, int Ho, int Wo) const {
    MatX<S> col = MatX<S>::Zero(Eigen::Index(cin_) * k_ * k_,
                                Eigen::Index(B) * Ho * Wo);
    for (int b = 0; b < B; ++b)
      for (int yo = 0; yo < Ho; ++yo)
        for (int xo = 0; xo < Wo; ++xo) {
          const Eigen::Index cidx = (Eigen::Index(b) * Ho + yo) * Wo + xo;
          for (int ky = 0; ky < k_; ++ky) {
            const int yi = yo * stride_ + ky - pad_;
            if (yi < 0 || yi >= H) continue;
            for (int kx = 0; kx < k_; ++kx) {
              const int xi = xo * stride_ + kx - pad_;
              if (xi < 0 || xi >= W) continue;
              const Eigen::Index src = (Eigen::Index(b) * H + yi) * W + xi;
              for (int ci = 0; ci < cin_; ++ci)
                col((Eigen::Index(ci) * k_ + ky) * k_ + kx, cidx) = x(ci, src);
            }
          }
        }
    return col;
  }

  MatX<S> col2im(const MatX<S>& dcol, int B, int H, int W, int Ho,
                 int Wo) const {
    MatX<S> dx = MatX<S>::Zero(cin_, Eigen::Index(B) * H * W);
    for (int b = 0; b < B; ++b)
      for (int yo = 0; yo < Ho; ++yo)
        for (int xo = 0; xo < Wo; ++xo) {
          const Eigen::Index cidx = (Eigen::Index(b) * Ho + yo) * Wo + xo;
          for (int ky = 0; ky < k_; ++ky) {
            const int yi = yo * stride_ + ky - pad_;
            if (yi < 0 || yi >= H) continue;
            for (int kx = 0; kx < k_; ++kx) {
              const int xi = xo * stride_ + kx - pad_;
              if (xi < 0 || xi >= W) continue;
              const Eigen::Index dst = (Eigen::Index(b) * H + yi) * W + xi;
              for (int ci = 0; ci < cin_; ++ci)
                dx(ci, dst) += dcol((Eigen::Index(ci) * k_ + ky) * k_ + kx, cidx);
            }
          }
        }
    return dx;
  }

  int cin_ = 0, cout_ = 0, k_ = 3, stride_ = 1, pad_ = 1;
  MatX<S> W_, gW_;
  VecX<S> b_, gb_;
};

// --- group normalization ---------------------------------------------------------

template <typename S>
class GroupNorm {
 public:
  struct Cache {
    MatX<S> xhat;
    MatX<S> inv_std;  // groups x B
    int B, H, W;
  };

  GroupNorm() = default;
  explicit GroupNorm(int channels)
      : channels_(channels), groups_(std::gcd(8, channels)) {
    gamma_ = VecX<S>::Ones(channels);
    beta_ = VecX<S>::Zero(channels);
    ggamma_ = VecX<S>::Zero(channels);
    gbeta_ = VecX<S>::Zero(channels);
  }

  MatX<S> forward(const MatX<S>& x, int B, int H, int W,
                  Cache* cache = nullptr) const {
    const int cpg = channels_ / groups_;
    const Eigen::Index hw = Eigen::Index(H) * W;
    MatX<S> xhat(x.rows(), x.cols());
    MatX<S> inv_std(groups_, B);
    for (int b = 0; b < B; ++b)
      for (int g = 0; g < groups_; ++g) {
        const auto blk = x.block(g * cpg, b * hw, cpg, hw);
        const S mean = blk.mean();
        const S var = (blk.array() - mean).square().mean();
        const S inv = S(1) / std::sqrt(var + S(kEps));
        inv_std(g, b) = inv;
        xhat.block(g * cpg, b * hw, cpg, hw) = (blk.array() - mean) * inv;
      }
    MatX<S> y = xhat.array().colwise() * gamma_.array();
    y.array().colwise() += beta_.array();
    if (cache) {
      cache->xhat = std::move(xhat);
      cache->inv_std = std::move(inv_std);
      cache->B = B;
      cache->H = H;
      cache->W = W;
      return y;
    }
    return y;
  }

  MatX<S> backward(const Cache& c, const MatX<S>& dy) {
    const int cpg = channels_ / groups_;
    const Eigen::Index hw = Eigen::Index(c.H) * c.W;
    ggamma_.array() += (dy.array() * c.xhat.array()).rowwise().sum();
    gbeta_.array() += dy.array().rowwise().sum();
    MatX<S> dxhat = dy.array().colwise() * gamma_.array();
    MatX<S> dx(dy.rows(), dy.cols());
    const S n = S(cpg) * S(hw);
    for (int b = 0; b < c.B; ++b)
      for (int g = 0; g < groups_; ++g) {
        const auto dxh = dxhat.block(g * cpg, b * hw, cpg, hw);
        const auto xh = c.xhat.block(g * cpg, b * hw, cpg, hw);
        const S sum_dxh = dxh.sum();
        const S sum_dxh_xh = (dxh.array() * xh.array()).sum();
        dx.block(g * cpg, b * hw, cpg, hw) =
            (dxh.array() - sum_dxh / n - xh.array() * (sum_dxh_xh / n)) *
            c.inv_std(g, b);
      }
    return dx;
  }

  void collect_params(const std::string& prefix,
                      std::vector<ParamView<S>>& out) {
    out.push_back(
        {prefix + ".gamma", gamma_.data(), ggamma_.data(), gamma_.size(), S(1)});
    out.push_back(
        {prefix + ".beta", beta_.data(), gbeta_.data(), beta_.size(), S(1)});
  }

  static constexpr double kEps = 1e-5;

 private:
  int channels_ = 0, groups_ = 1;
  VecX<S> gamma_, beta_, ggamma_, gbeta_;
};

// --- dense layer -----------------------------------------------------------------

template <typename S>
class Linear {
 public:
  struct Cache {
    MatX<S> input;
  };

  Linear() = default;
  Linear(int in, int out) {
    W_ = MatX<S>::Zero(out, in);
    b_ = VecX<S>::Zero(out);
    gW_ = MatX<S>::Zero(out, in);
    gb_ = VecX<S>::Zero(out);
  }

  void init(Rng& rng) {
    const S bound = std::sqrt(S(6) / S(W_.rows() + W_.cols()));
    for (Eigen::Index i = 0; i < W_.size(); ++i)
      W_.data()[i] = S(rng.uniform() * 2.0 - 1.0) * bound;
    b_.setZero();
  }

  MatX<S> forward(const MatX<S>& x, Cache* cache = nullptr) const {
    if (cache) cache->input = x;
    return (W_ * x).colwise() + b_;
  }

  MatX<S> backward(const Cache& c, const MatX<S>& dy) {
    gW_.noalias() += dy * c.input.transpose();
    gb_.noalias() += dy.rowwise().sum();
    return W_.transpose() * dy;
  }

  void collect_params(const std::string& prefix,
                      std::vector<ParamView<S>>& out) {
    out.push_back({prefix + ".w", W_.data(), gW_.data(), W_.size(), S(1)});
    out.push_back({prefix + ".b", b_.data(), gb_.data(), b_.size(), S(1)});
  }

 private:
  MatX<S> W_, gW_;
  VecX<S> b_, gb_;
};

// --- residual block ----------------------------------------------------------------

// GN -> SiLU -> conv3x3 -> (+ per-channel time bias) -> GN -> SiLU -> conv3x3,
// added to the (possibly 1x1-projected) input.
template <typename S>
class ResBlock {
 public:
  struct Cache {
    typename GroupNorm<S>::Cache gn1, gn2;
    MatX<S> silu1_in, silu2_in;
    typename Conv2d<S>::Cache conv1, conv2, skip;
    typename Linear<S>::Cache temb;
    int B, H, W;
  };

  ResBlock() = default;
  ResBlock(int cin, int cout, int temb_dim)
      : cin_(cin),
        cout_(cout),
        gn1_(cin),
        gn2_(cout),
        conv1_(cin, cout, 3, 1),
        conv2_(cout, cout, 3, 1),
        temb_proj_(temb_dim, cout) {
    if (cin != cout) skip_ = Conv2d<S>(cin, cout, 1, 1);
  }

  void init(Rng& rng) {
    Rng r1 = rng.fork(1), r2 = rng.fork(2), r3 = rng.fork(3), r4 = rng.fork(4);
    conv1_.init(r1);
    conv2_.init(r2);
    temb_proj_.init(r3);
    if (cin_ != cout_) skip_.init(r4);
  }

  MatX<S> forward(const MatX<S>& x, const MatX<S>& temb, int B, int H, int W,
                  Cache* cache) const {
    typename GroupNorm<S>::Cache gn1c;
    const MatX<S> h1 = gn1_.forward(x, B, H, W, cache ? &gn1c : nullptr);
    const MatX<S> a1 = silu_forward(h1);
    typename Conv2d<S>::Cache c1c;
    MatX<S> h = conv1_.forward(a1, B, H, W, cache ? &c1c : nullptr);

    typename Linear<S>::Cache tc;
    const MatX<S> tb = temb_proj_.forward(temb, cache ? &tc : nullptr);
    const Eigen::Index hw = Eigen::Index(H) * W;
    for (int b = 0; b < B; ++b)
      h.middleCols(b * hw, hw).colwise() += tb.col(b);

    typename GroupNorm<S>::Cache gn2c;
    const MatX<S> h2 = gn2_.forward(h, B, H, W, cache ? &gn2c : nullptr);
    const MatX<S> a2 = silu_forward(h2);
    typename Conv2d<S>::Cache c2c;
    MatX<S> out = conv2_.forward(a2, B, H, W, cache ? &c2c : nullptr);

    typename Conv2d<S>::Cache skc;
    if (cin_ != cout_)
      out += skip_.forward(x, B, H, W, cache ? &skc : nullptr);
    else
      out += x;

    if (cache) {
      cache->gn1 = std::move(gn1c);
      cache->gn2 = std::move(gn2c);
      cache->silu1_in = h1;
      cache->silu2_in = h2;
      cache->conv1 = std::move(c1c);
      cache->conv2 = std::move(c2c);
      cache->skip = std::move(skc);
      cache->temb = std::move(tc);
      cache->B = B;
      cache->H = H;
      cache->W = W;
    }
    return out;
  }

  // Returns dx; accumulates dtemb into the given matrix.
  MatX<S> backward(const Cache& c, const MatX<S>& dy, MatX<S>& dtemb) {
    MatX<S> dh_conv2_in = conv2_.backward(c.conv2, dy);
    MatX<S> dh2 = silu_backward(c.silu2_in, dh_conv2_in);
    MatX<S> dh = gn2_.backward(c.gn2, dh2);

    // Time bias: sum gradient over spatial positions per batch element.
    const Eigen::Index hw = Eigen::Index(c.H) * c.W;
    MatX<S> dtb(cout_, c.B);
    for (int b = 0; b < c.B; ++b)
      dtb.col(b) = dh.middleCols(b * hw, hw).rowwise().sum();
    dtemb += temb_proj_.backward(c.temb, dtb);

    MatX<S> da1 = conv1_.backward(c.conv1, dh);
    MatX<S> dh1 = silu_backward(c.silu1_in, da1);
    MatX<S> dx = gn1_.backward(c.gn1, dh1);

    if (cin_ != cout_)
      dx += skip_.backward(c.skip, dy);
    else
      dx += dy;
    return dx;
  }

  void collect_params(const std::string& prefix,
                      std::vector<ParamView<S>>& out) {
    gn1_.collect_params(prefix + ".gn1", out);
    gn2_.collect_params(prefix + ".gn2", out);
    conv1_.collect_params(prefix + ".conv1", out);
    conv2_.collect_params(prefix + ".conv2", out);
    temb_proj_.collect_params(prefix + ".temb", out);
    if (cin_ != cout_) skip_.collect_params(prefix + ".skip", out);
  }

 private:
  int cin_ = 0, cout_ = 0;
  GroupNorm<S> gn1_, gn2_;
  Conv2d<S> conv1_, conv2_, skip_;
  Linear<S> temb_proj_;
};

// --- nearest-neighbor up/down helpers ----------------------------------------------

template <typename S>
MatX<S> upsample2x(const MatX<S>& x, int B, int H, int W) {
  MatX<S> y(x.rows(), Eigen::Index(B) * (2 * H) * (2 * W));
  for (int b = 0; b < B; ++b)
    for (int yy = 0; yy < 2 * H; ++yy)
      for (int xx = 0; xx < 2 * W; ++xx)
        y.col((Eigen::Index(b) * 2 * H + yy) * 2 * W + xx) =
            x.col((Eigen::Index(b) * H + yy / 2) * W + xx / 2);
  return y;
}

template <typename S>
MatX<S> upsample2x_backward(const MatX<S>& dy, int B, int H, int W) {
  MatX<S> dx = MatX<S>::Zero(dy.rows(), Eigen::Index(B) * H * W);
  for (int b = 0; b < B; ++b)
    for (int yy = 0; yy < 2 * H; ++yy)
      for (int xx = 0; xx < 2 * W; ++xx)
        dx.col((Eigen::Index(b) * H + yy / 2) * W + xx / 2) +=
            dy.col((Eigen::Index(b) * 2 * H + yy) * 2 * W + xx);
  return dx;
}

// --- the denoiser -------------------------------------------------------------------

struct DenoiserConfig {
  int c0 = 64, c1 = 128, c2 = 256;
  int temb_dim = 64;
  int in_channels = 4;

  nlohmann::json to_json() const {
    return {{"c0", c0}, {"c1", c1}, {"c2", c2},
            {"temb_dim", temb_dim}, {"in_channels", in_channels}};
  }
  static DenoiserConfig from_json(const nlohmann::json& j) {
    DenoiserConfig c;
    c.c0 = j.at("c0");
    c.c1 = j.at("c1");
    c.c2 = j.at("c2");
    c.temb_dim = j.at("temb_dim");
    c.in_channels = j.at("in_channels");
    return c;
  }
};

// Three-scale convolutional encoder-decoder with skip connections and a
// sinusoidal embedding of the diffusion step injected into every residual
// block. Input and output are in_channels x P x P.
template <typename S>
class DenoiserNetwork {
 public:
  struct Cache {
    int B = 0, P = 0;
    MatX<S> temb_sin;
    typename Linear<S>::Cache temb_fc;
    MatX<S> temb_silu_in;
    typename Conv2d<S>::Cache stem;
    typename ResBlock<S>::Cache d0a, d0b, d1a, d1b, mid_a, mid_b;
    typename Conv2d<S>::Cache down0, down1;
    typename ResBlock<S>::Cache u1a, u1b, u0a, u0b;
    typename Conv2d<S>::Cache upc1, upc0;
    typename GroupNorm<S>::Cache head_gn;
    MatX<S> head_silu_in;
    typename Conv2d<S>::Cache head;
  };

  DenoiserNetwork() : DenoiserNetwork(DenoiserConfig{}, Rng(1)) {}

  DenoiserNetwork(const DenoiserConfig& cfg, Rng rng)
      : cfg_(cfg),
        temb_fc_(cfg.temb_dim, cfg.temb_dim),
        stem_(cfg.in_channels, cfg.c0, 3, 1),
        d0a_(cfg.c0, cfg.c0, cfg.temb_dim),
        d0b_(cfg.c0, cfg.c0, cfg.temb_dim),
        down0_(cfg.c0, cfg.c1, 3, 2),
        d1a_(cfg.c1, cfg.c1, cfg.temb_dim),
        d1b_(cfg.c1, cfg.c1, cfg.temb_dim),
        down1_(cfg.c1, cfg.c2, 3, 2),
        mid_a_(cfg.c2, cfg.c2, cfg.temb_dim),
        mid_b_(cfg.c2, cfg.c2, cfg.temb_dim),
        upc1_(cfg.c2, cfg.c1, 3, 1),
        u1a_(2 * cfg.c1, cfg.c1, cfg.temb_dim),
        u1b_(cfg.c1, cfg.c1, cfg.temb_dim),
        upc0_(cfg.c1, cfg.c0, 3, 1),
        u0a_(2 * cfg.c0, cfg.c0, cfg.temb_dim),
        u0b_(cfg.c0, cfg.c0, cfg.temb_dim),
        head_gn_(cfg.c0),
        head_(cfg.c0, cfg.in_channels, 3, 1) {
    int tag = 0;
    auto next = [&] { return rng.fork(++tag); };
    Rng r;
    r = next(); temb_fc_.init(r);
    r = next(); stem_.init(r);
    r = next(); d0a_.init(r);
    r = next(); d0b_.init(r);
    r = next(); down0_.init(r);
    r = next(); d1a_.init(r);
    r = next(); d1b_.init(r);
    r = next(); down1_.init(r);
    r = next(); mid_a_.init(r);
    r = next(); mid_b_.init(r);
    r = next(); upc1_.init(r);
    r = next(); u1a_.init(r);
    r = next(); u1b_.init(r);
    r = next(); upc0_.init(r);
    r = next(); u0a_.init(r);
    r = next(); u0b_.init(r);
    // Zero-initialized head: a fresh model predicts exactly zero noise.
    head_.init_zero();
  }

  const DenoiserConfig& config() const { return cfg_; }

  // Sinusoidal embedding of integer diffusion steps (one column per element).
  MatX<S> sin_embedding(const ArrX<S>& taus) const {
    const int half = cfg_.temb_dim / 2;
    MatX<S> e(cfg_.temb_dim, taus.size());
    for (Eigen::Index b = 0; b < taus.size(); ++b)
      for (int i = 0; i < half; ++i) {
        const S freq =
            std::exp(S(-std::log(10000.0)) * S(i) / S(half - 1));
        e(2 * i, b) = std::sin(taus[b] * freq);
        e(2 * i + 1, b) = std::cos(taus[b] * freq);
      }
    return e;
  }

  // x: in_channels x (B*P*P); taus: B diffusion step indices.
  MatX<S> forward(const MatX<S>& x, const ArrX<S>& taus, int B, int P,
                  Cache* cc = nullptr) const {
    check(P >= 4, "denoiser: patch side too small");
    Cache local;
    Cache& c = cc ? *cc : local;
    c.B = B;
    c.P = P;

    c.temb_sin = sin_embedding(taus);
    const MatX<S> temb_pre = temb_fc_.forward(c.temb_sin, &c.temb_fc);
    c.temb_silu_in = temb_pre;
    const MatX<S> temb = silu_forward(temb_pre);

    const int P1 = down0_.out_size(P);
    const int P2 = down1_.out_size(P1);

    MatX<S> h0 = stem_.forward(x, B, P, P, &c.stem);
    h0 = d0a_.forward(h0, temb, B, P, P, &c.d0a);
    h0 = d0b_.forward(h0, temb, B, P, P, &c.d0b);
    const MatX<S> s0 = h0;

    MatX<S> h1 = down0_.forward(h0, B, P, P, &c.down0);
    h1 = d1a_.forward(h1, temb, B, P1, P1, &c.d1a);
    h1 = d1b_.forward(h1, temb, B, P1, P1, &c.d1b);
    const MatX<S> s1 = h1;

    MatX<S> h2 = down1_.forward(h1, B, P1, P1, &c.down1);
    h2 = mid_a_.forward(h2, temb, B, P2, P2, &c.mid_a);
    h2 = mid_b_.forward(h2, temb, B, P2, P2, &c.mid_b);

    MatX<S> u1 = upsample_to(h2, B, P2, P1);
    u1 = upc1_.forward(u1, B, P1, P1, &c.upc1);
    MatX<S> cat1(u1.rows() + s1.rows(), u1.cols());
    cat1 << u1, s1;
    MatX<S> g1 = u1a_.forward(cat1, temb, B, P1, P1, &c.u1a);
    g1 = u1b_.forward(g1, temb, B, P1, P1, &c.u1b);

    MatX<S> u0 = upsample_to(g1, B, P1, P);
    u0 = upc0_.forward(u0, B, P, P, &c.upc0);
    MatX<S> cat0(u0.rows() + s0.rows(), u0.cols());
    cat0 << u0, s0;
    MatX<S> g0 = u0a_.forward(cat0, temb, B, P, P, &c.u0a);
    g0 = u0b_.forward(g0, temb, B, P, P, &c.u0b);

    const MatX<S> hg = head_gn_.forward(g0, B, P, P, &c.head_gn);
    c.head_silu_in = hg;
    const MatX<S> ha = silu_forward(hg);
    return head_.forward(ha, B, P, P, &c.head);
  }

  // Accumulates parameter gradients for d(loss)/d(output).
  void backward(const Cache& c, const MatX<S>& dout) {
    const int B = c.B, P = c.P;
    const int P1 = down0_.out_size(P);
    const int P2 = down1_.out_size(P1);
    MatX<S> dtemb = MatX<S>::Zero(cfg_.temb_dim, B);

    MatX<S> dha = head_.backward(c.head, dout);
    MatX<S> dhg = silu_backward(c.head_silu_in, dha);
    MatX<S> dg0 = head_gn_.backward(c.head_gn, dhg);

    dg0 = u0b_.backward(c.u0b, dg0, dtemb);
    MatX<S> dcat0 = u0a_.backward(c.u0a, dg0, dtemb);
    MatX<S> du0 = dcat0.topRows(cfg_.c0);
    MatX<S> ds0 = dcat0.bottomRows(cfg_.c0);
    MatX<S> dg1 = upsample_backward_to(upc0_.backward(c.upc0, du0), B, P1, P);

    dg1 = u1b_.backward(c.u1b, dg1, dtemb);
    MatX<S> dcat1 = u1a_.backward(c.u1a, dg1, dtemb);
    MatX<S> du1 = dcat1.topRows(cfg_.c1);
    MatX<S> ds1 = dcat1.bottomRows(cfg_.c1);
    MatX<S> dh2 = upsample_backward_to(upc1_.backward(c.upc1, du1), B, P2, P1);

    dh2 = mid_b_.backward(c.mid_b, dh2, dtemb);
    dh2 = mid_a_.backward(c.mid_a, dh2, dtemb);
    MatX<S> dh1 = down1_.backward(c.down1, dh2);
    dh1 += ds1;

    dh1 = d1b_.backward(c.d1b, dh1, dtemb);
    dh1 = d1a_.backward(c.d1a, dh1, dtemb);
    MatX<S> dh0 = down0_.backward(c.down0, dh1);
    dh0 += ds0;

    dh0 = d0b_.backward(c.d0b, dh0, dtemb);
    dh0 = d0a_.backward(c.d0a, dh0, dtemb);
    stem_.backward(c.stem, dh0);

    const MatX<S> dtemb_pre = silu_backward(c.temb_silu_in, dtemb);
    temb_fc_.backward(c.temb_fc, dtemb_pre);
  }

  std::vector<ParamView<S>> param_views() {
    std::vector<ParamView<S>> out;
    temb_fc_.collect_params("temb_fc", out);
    stem_.collect_params("stem", out);
    d0a_.collect_params("d0a", out);
    d0b_.collect_params("d0b", out);
    down0_.collect_params("down0", out);
    d1a_.collect_params("d1a", out);
    d1b_.collect_params("d1b", out);
    down1_.collect_params("down1", out);
    mid_a_.collect_params("mid_a", out);
    mid_b_.collect_params("mid_b", out);
    upc1_.collect_params("upc1", out);
    u1a_.collect_params("u1a", out);
    u1b_.collect_params("u1b", out);
    upc0_.collect_params("upc0", out);
    u0a_.collect_params("u0a", out);
    u0b_.collect_params("u0b", out);
    head_gn_.collect_params("head_gn", out);
    head_.collect_params("head", out);
    return out;
  }

 private:
  // Nearest-neighbor upsample from side `from` to side `to` (to = 2*from or
  // 2*from - 1 when the stride-2 conv rounded up on an odd input).
  static MatX<S> upsample_to(const MatX<S>& x, int B, int from, int to) {
    MatX<S> y = upsample2x(x, B, from, from);
    if (2 * from == to) return y;
    // Crop the duplicated last row/column.
    MatX<S> z(x.rows(), Eigen::Index(B) * to * to);
    for (int b = 0; b < B; ++b)
      for (int yy = 0; yy < to; ++yy)
        for (int xx = 0; xx < to; ++xx)
          z.col((Eigen::Index(b) * to + yy) * to + xx) =
              y.col((Eigen::Index(b) * 2 * from + yy) * 2 * from + xx);
    return z;
  }

  static MatX<S> upsample_backward_to(const MatX<S>& dy, int B, int from,
                                      int to) {
    if (2 * from == to) return upsample2x_backward(dy, B, from, from);
    MatX<S> pad = MatX<S>::Zero(dy.rows(), Eigen::Index(B) * 4 * from * from);
    for (int b = 0; b < B; ++b)
      for (int yy = 0; yy < to; ++yy)
        for (int xx = 0; xx < to; ++xx)
          pad.col((Eigen::Index(b) * 2 * from + yy) * 2 * from + xx) =
              dy.col((Eigen::Index(b) * to + yy) * to + xx);
    return upsample2x_backward(pad, B, from, from);
  }

  DenoiserConfig cfg_;
  Linear<S> temb_fc_;
  Conv2d<S> stem_;
  ResBlock<S> d0a_, d0b_;
  Conv2d<S> down0_;
  ResBlock<S> d1a_, d1b_;
  Conv2d<S> down1_;
  ResBlock<S> mid_a_, mid_b_;
  Conv2d<S> upc1_;
  ResBlock<S> u1a_, u1b_;
  Conv2d<S> upc0_;
  ResBlock<S> u0a_, u0b_;
  GroupNorm<S> head_gn_;
  Conv2d<S> head_;
};

}  // namespace rgbdprior::ddm
