#pragma once

#include <cmath>
#include <vector>

#include <json.hpp>

#include "rgbdprior/common.hpp"
#include "rgbdprior/io.hpp"
#include "rgbdprior/params.hpp"

namespace rgbdprior::fields {

// Real spherical-harmonic basis, bands 0..3 (16 terms), for a unit direction.
template <typename S>
Eigen::Matrix<S, 16, 1> sh16(const Vec3<S>& d) {
  const S x = d.x(), y = d.y(), z = d.z();
  const S xx = x * x, yy = y * y, zz = z * z;
  Eigen::Matrix<S, 16, 1> b;
  b[0] = S(0.28209479177387814);
  b[1] = S(0.4886025119029199) * y;
  b[2] = S(0.4886025119029199) * z;
  b[3] = S(0.4886025119029199) * x;
  b[4] = S(1.0925484305920792) * x * y;
  b[5] = S(1.0925484305920792) * y * z;
  b[6] = S(0.31539156525252005) * (S(3) * zz - S(1));
  b[7] = S(1.0925484305920792) * x * z;
  b[8] = S(0.5462742152960396) * (xx - yy);
  b[9] = S(0.5900435899266435) * y * (S(3) * xx - yy);
  b[10] = S(2.890611442640554) * x * y * z;
  b[11] = S(0.4570457994644658) * y * (S(5) * zz - S(1));
  b[12] = S(0.3731763325901154) * z * (S(5) * zz - S(3));
  b[13] = S(0.4570457994644658) * x * (S(5) * zz - S(1));
  b[14] = S(1.445305721320277) * z * (xx - yy);
  b[15] = S(0.5900435899266435) * x * (xx - S(3) * yy);
  return b;
}

// --- multiresolution dense feature grid ---------------------------------------

struct GridConfig {
  int levels = 8;
  int base_res = 16;
  double growth = 1.5;
  int feats = 2;

  int level_res(int l) const {
    return int(std::floor(base_res * std::pow(growth, l)));
  }
  int out_dim() const { return levels * feats; }

  nlohmann::json to_json() const {
    return {{"levels", levels}, {"base_res", base_res},
            {"growth", growth}, {"feats", feats}};
  }
  static GridConfig from_json(const nlohmann::json& j) {
    GridConfig c;
    c.levels = j.at("levels");
    c.base_res = j.at("base_res");
    c.growth = j.at("growth");
    c.feats = j.at("feats");
    return c;
  }
};

// Dense trilinearly interpolated feature grid per level; features of all
// levels are concatenated. Input coordinates live in the unit cube.
template <typename S>
class GridEncoding {
 public:
  GridEncoding() = default;
  explicit GridEncoding(const GridConfig& cfg) : cfg_(cfg) {
    Eigen::Index total = 0;
    for (int l = 0; l < cfg_.levels; ++l) {
      offsets_.push_back(total);
      const Eigen::Index r = cfg_.level_res(l);
      total += r * r * r * cfg_.feats;
    }
    params = ArrX<S>::Zero(total);
    grads = ArrX<S>::Zero(total);
  }

  const GridConfig& config() const { return cfg_; }
  int out_dim() const { return cfg_.out_dim(); }

  void init(Rng& rng, S scale = S(1e-4)) {
    for (Eigen::Index i = 0; i < params.size(); ++i)
      params[i] = S(rng.uniform() * 2.0 - 1.0) * scale;
  }

  // u in [0,1]^3; writes cfg.out_dim() values.
  void encode(const Vec3<S>& u, S* out) const {
    for (int l = 0; l < cfg_.levels; ++l) {
      const int r = cfg_.level_res(l);
      int ix, iy, iz;
      S fx, fy, fz;
      locate(u, r, ix, iy, iz, fx, fy, fz);
      for (int f = 0; f < cfg_.feats; ++f) out[l * cfg_.feats + f] = S(0);
      for (int corner = 0; corner < 8; ++corner) {
        const int dx = corner & 1, dy = (corner >> 1) & 1, dz = corner >> 2;
        const S w = (dx ? fx : S(1) - fx) * (dy ? fy : S(1) - fy) *
                    (dz ? fz : S(1) - fz);
        const Eigen::Index base =
            offsets_[l] +
            ((Eigen::Index(iz + dz) * r + (iy + dy)) * r + (ix + dx)) * cfg_.feats;
        for (int f = 0; f < cfg_.feats; ++f)
          out[l * cfg_.feats + f] += w * params[base + f];
      }
    }
  }

  // Accumulates d(loss)/d(params) for the stencil of u given d(loss)/d(out).
  void encode_backward(const Vec3<S>& u, const S* dout) {
    for (int l = 0; l < cfg_.levels; ++l) {
      const int r = cfg_.level_res(l);
      int ix, iy, iz;
      S fx, fy, fz;
      locate(u, r, ix, iy, iz, fx, fy, fz);
      for (int corner = 0; corner < 8; ++corner) {
        const int dx = corner & 1, dy = (corner >> 1) & 1, dz = corner >> 2;
        const S w = (dx ? fx : S(1) - fx) * (dy ? fy : S(1) - fy) *
                    (dz ? fz : S(1) - fz);
        const Eigen::Index base =
            offsets_[l] +
            ((Eigen::Index(iz + dz) * r + (iy + dy)) * r + (ix + dx)) * cfg_.feats;
        for (int f = 0; f < cfg_.feats; ++f)
          grads[base + f] += w * dout[l * cfg_.feats + f];
      }
    }
  }

  ArrX<S> params;
  ArrX<S> grads;

 private:
  static void locate(const Vec3<S>& u, int r, int& ix, int& iy, int& iz,
                     S& fx, S& fy, S& fz) {
    const S px = u.x() * S(r - 1), py = u.y() * S(r - 1), pz = u.z() * S(r - 1);
    ix = std::min(std::max(int(std::floor(px)), 0), r - 2);
    iy = std::min(std::max(int(std::floor(py)), 0), r - 2);
    iz = std::min(std::max(int(std::floor(pz)), 0), r - 2);
    fx = px - S(ix);
    fy = py - S(iy);
    fz = pz - S(iz);
  }

  GridConfig cfg_;
  std::vector<Eigen::Index> offsets_;
};

// --- small fully connected network --------------------------------------------

// Hidden layers use ReLU; the output layer is linear (callers apply their own
// output mapping). Batches are stored one column per element.
template <typename S>
class Mlp {
 public:
  struct Workspace {
    std::vector<MatX<S>> inputs;  // input to each layer (post-activation)
  };

  Mlp() = default;
  explicit Mlp(std::vector<int> sizes) : sizes_(std::move(sizes)) {
    check(sizes_.size() >= 2, "Mlp needs at least input and output sizes");
    for (size_t l = 0; l + 1 < sizes_.size(); ++l) {
      W.emplace_back(MatX<S>::Zero(sizes_[l + 1], sizes_[l]));
      b.emplace_back(VecX<S>::Zero(sizes_[l + 1]));
      gW.emplace_back(MatX<S>::Zero(sizes_[l + 1], sizes_[l]));
      gb.emplace_back(VecX<S>::Zero(sizes_[l + 1]));
    }
  }

  const std::vector<int>& sizes() const { return sizes_; }
  size_t num_layers() const { return W.size(); }

  void init(Rng& rng) {
    for (size_t l = 0; l < W.size(); ++l) {
      const S k = std::sqrt(S(6) / S(W[l].rows() + W[l].cols()));
      for (Eigen::Index i = 0; i < W[l].size(); ++i)
        W[l].data()[i] = S(rng.uniform() * 2.0 - 1.0) * k;
      b[l].setZero();
    }
  }

  MatX<S> forward(const MatX<S>& x, Workspace* ws = nullptr) const {
    MatX<S> h = x;
    if (ws) ws->inputs.assign(1, h);
    for (size_t l = 0; l < W.size(); ++l) {
      MatX<S> z = (W[l] * h).colwise() + b[l];
      if (l + 1 < W.size()) z = z.cwiseMax(S(0));
      h = std::move(z);
      if (ws && l + 1 < W.size()) ws->inputs.push_back(h);
    }
    return h;
  }

  // Accumulates parameter gradients; returns d(loss)/d(input).
  MatX<S> backward(const Workspace& ws, const MatX<S>& dy) {
    MatX<S> dz = dy;
    for (size_t l = W.size(); l-- > 0;) {
      gW[l].noalias() += dz * ws.inputs[l].transpose();
      gb[l].noalias() += dz.rowwise().sum();
      if (l == 0) return W[l].transpose() * dz;
      MatX<S> dx = W[l].transpose() * dz;
      // ReLU mask from the stored post-activation input of layer l.
      dz = dx.cwiseProduct(
          (ws.inputs[l].array() > S(0)).template cast<S>().matrix());
    }
    return dz;
  }

  void collect_params(const std::string& prefix, S lr_mult,
                      std::vector<ParamView<S>>& out) {
    for (size_t l = 0; l < W.size(); ++l) {
      out.push_back({prefix + ".w" + std::to_string(l), W[l].data(),
                     gW[l].data(), W[l].size(), lr_mult});
      out.push_back({prefix + ".b" + std::to_string(l), b[l].data(),
                     gb[l].data(), b[l].size(), lr_mult});
    }
  }

  std::vector<MatX<S>> W, gW;
  std::vector<VecX<S>> b, gb;

 private:
  std::vector<int> sizes_;
};

// --- radiance field ------------------------------------------------------------

struct FieldConfig {
  GridConfig grid;
  int hidden = 64;

  nlohmann::json to_json() const {
    return {{"grid", grid.to_json()}, {"hidden", hidden}};
  }
  static FieldConfig from_json(const nlohmann::json& j) {
    FieldConfig c;
    c.grid = GridConfig::from_json(j.at("grid"));
    c.hidden = j.at("hidden");
    return c;
  }
};

// Density + view-dependent color fields over an axis-aligned box. Density is
// exp-activated (clamped above), color sigmoid-activated; outside the box the
// density is exactly 0 and the color is the background color.
template <typename S>
class RadianceField {
 public:
  static constexpr double kSigmaMax = 1e4;
  static constexpr double kInitSigma = 0.1;

  RadianceField() : RadianceField(FieldConfig{}, Aabb<S>{}, Rng(1)) {}

  RadianceField(const FieldConfig& cfg, const Aabb<S>& bounds, Rng rng)
      : cfg_(cfg),
        bounds_(bounds),
        density_enc_(cfg.grid),
        color_enc_(cfg.grid),
        density_net_({cfg.grid.out_dim(), cfg.hidden, cfg.hidden, 1}),
        color_net_({cfg.grid.out_dim() + 16, cfg.hidden, cfg.hidden, 3}) {
    Rng r0 = rng.fork(101), r1 = rng.fork(102), r2 = rng.fork(103),
        r3 = rng.fork(104);
    density_enc_.init(r0);
    color_enc_.init(r1);
    density_net_.init(r2);
    color_net_.init(r3);
    // Bias the raw density so a fresh field starts near-transparent
    // (sigma ~= kInitSigma everywhere).
    density_net_.b.back()[0] = S(std::log(kInitSigma));
  }

  const FieldConfig& config() const { return cfg_; }
  const Aabb<S>& bounds() const { return bounds_; }
  Vec3<S>& background() { return background_; }
  const Vec3<S>& background() const { return background_; }

  // --- batched evaluation with optional backward state ---

  struct DensityWs {
    MatX<S> feats;            // enc_dim x B
    typename Mlp<S>::Workspace mlp;
    ArrX<S> sigma;            // activated output (0 for outside points)
    std::vector<Vec3<S>> unit;
    std::vector<uint8_t> inside;
  };

  // pts: 3 x B world positions. Returns sigma per point.
  ArrX<S> density_forward(const MatX<S>& pts, DensityWs* ws = nullptr) const {
    const Eigen::Index B = pts.cols();
    MatX<S> feats = MatX<S>::Zero(density_enc_.out_dim(), B);
    std::vector<Vec3<S>> unit(B);
    std::vector<uint8_t> inside(B);
    for (Eigen::Index i = 0; i < B; ++i) {
      const Vec3<S> x = pts.col(i);
      check(x.allFinite(), "density query at non-finite position");
      inside[i] = bounds_.contains(x);
      if (inside[i]) {
        unit[i] = bounds_.to_unit(x);
        density_enc_.encode(unit[i], feats.col(i).data());
      }
    }
    typename Mlp<S>::Workspace mlp_ws;
    const MatX<S> raw =
        density_net_.forward(feats, ws ? &mlp_ws : nullptr);
    ArrX<S> sigma(B);
    for (Eigen::Index i = 0; i < B; ++i)
      sigma[i] = inside[i] ? raw_to_sigma(raw(0, i)) : S(0);
    if (ws) {
      ws->feats = std::move(feats);
      ws->mlp = std::move(mlp_ws);
      ws->sigma = sigma;
      ws->unit = std::move(unit);
      ws->inside = std::move(inside);
    }
    return sigma;
  }

  void density_backward(const DensityWs& ws, const ArrX<S>& dsigma) {
    const Eigen::Index B = dsigma.size();
    MatX<S> draw(1, B);
    for (Eigen::Index i = 0; i < B; ++i) {
      // d sigma / d raw = sigma while below the clamp, else 0.
      const bool clamped = ws.sigma[i] >= S(kSigmaMax);
      draw(0, i) =
          (ws.inside[i] && !clamped) ? dsigma[i] * ws.sigma[i] : S(0);
    }
    const MatX<S> dfeats = density_net_.backward(ws.mlp, draw);
    for (Eigen::Index i = 0; i < B; ++i)
      if (ws.inside[i] && draw(0, i) != S(0))
        density_enc_.encode_backward(ws.unit[i], dfeats.col(i).data());
  }

  struct ColorWs {
    MatX<S> feats;  // (enc_dim + 16) x B
    typename Mlp<S>::Workspace mlp;
    MatX<S> rgb;    // 3 x B after sigmoid
    std::vector<Vec3<S>> unit;
    std::vector<uint8_t> inside;
  };

  // pts: 3 x B, sh: 16 x B direction features. Returns RGB columns in [0,1].
  MatX<S> color_forward(const MatX<S>& pts, const MatX<S>& sh,
                        ColorWs* ws = nullptr) const {
    const Eigen::Index B = pts.cols();
    const int enc_dim = color_enc_.out_dim();
    MatX<S> feats = MatX<S>::Zero(enc_dim + 16, B);
    std::vector<Vec3<S>> unit(B);
    std::vector<uint8_t> inside(B);
    for (Eigen::Index i = 0; i < B; ++i) {
      const Vec3<S> x = pts.col(i);
      check(x.allFinite(), "color query at non-finite position");
      inside[i] = bounds_.contains(x);
      if (inside[i]) {
        unit[i] = bounds_.to_unit(x);
        color_enc_.encode(unit[i], feats.col(i).data());
        feats.col(i).tail(16) = sh.col(i);
      }
    }
    typename Mlp<S>::Workspace mlp_ws;
    const MatX<S> raw = color_net_.forward(feats, ws ? &mlp_ws : nullptr);
    MatX<S> rgb(3, B);
    for (Eigen::Index i = 0; i < B; ++i)
      for (int c = 0; c < 3; ++c)
        rgb(c, i) = inside[i] ? sigmoid(raw(c, i)) : background_[c];
    if (ws) {
      ws->feats = std::move(feats);
      ws->mlp = std::move(mlp_ws);
      ws->rgb = rgb;
      ws->unit = std::move(unit);
      ws->inside = std::move(inside);
    }
    return rgb;
  }

  void color_backward(const ColorWs& ws, const MatX<S>& drgb) {
    const Eigen::Index B = drgb.cols();
    MatX<S> draw(3, B);
    for (Eigen::Index i = 0; i < B; ++i)
      for (int c = 0; c < 3; ++c) {
        const S y = ws.rgb(c, i);
        draw(c, i) = ws.inside[i] ? drgb(c, i) * y * (S(1) - y) : S(0);
      }
    const MatX<S> dfeats = color_net_.backward(ws.mlp, draw);
    for (Eigen::Index i = 0; i < B; ++i)
      if (ws.inside[i] && draw.col(i).squaredNorm() != S(0))
        color_enc_.encode_backward(ws.unit[i], dfeats.col(i).data());
  }

  // --- single-point convenience queries ---

  S query_density(const Vec3<S>& x) const {
    check(x.allFinite(), "density query at non-finite position");
    MatX<S> pts(3, 1);
    pts.col(0) = x;
    return density_forward(pts)[0];
  }

  Vec3<S> query_color(const Vec3<S>& x, const Vec3<S>& d) const {
    check(x.allFinite() && d.allFinite(), "color query with non-finite input");
    check(std::abs(d.norm() - S(1)) <= S(1e-6),
          "color query direction must be unit length");
    MatX<S> pts(3, 1), sh(16, 1);
    pts.col(0) = x;
    sh.col(0) = sh16(d);
    return color_forward(pts, sh).col(0);
  }

  static S raw_to_sigma(S raw) {
    const S cap = S(std::log(kSigmaMax));
    return std::exp(std::min(raw, cap));
  }
  static S sigmoid(S x) { return S(1) / (S(1) + std::exp(-x)); }

  std::vector<ParamView<S>> param_views() {
    std::vector<ParamView<S>> out;
    out.push_back({"density_grid", density_enc_.params.data(),
                   density_enc_.grads.data(), density_enc_.params.size(),
                   S(1)});
    out.push_back({"color_grid", color_enc_.params.data(),
                   color_enc_.grads.data(), color_enc_.params.size(), S(1)});
    density_net_.collect_params("density_net", S(0.1), out);
    color_net_.collect_params("color_net", S(0.1), out);
    return out;
  }

  // --- checkpointing ---

  static constexpr const char* kCheckpointTag = "rfield-v1";

  Checkpoint to_checkpoint() const {
    Checkpoint ckpt;
    ckpt.tag = kCheckpointTag;
    ckpt.meta = {{"config", cfg_.to_json()},
                 {"bounds_lo", {bounds_.lo.x(), bounds_.lo.y(), bounds_.lo.z()}},
                 {"bounds_hi", {bounds_.hi.x(), bounds_.hi.y(), bounds_.hi.z()}},
                 {"background",
                  {background_.x(), background_.y(), background_.z()}}};
    auto views = const_cast<RadianceField*>(this)->param_views();
    for (const auto& v : views) {
      NamedTensor t;
      t.shape = {v.size};
      t.data = Eigen::Map<const ArrX<S>>(v.value, v.size).template cast<float>();
      ckpt.tensors.emplace(v.name, std::move(t));
    }
    return ckpt;
  }

  static RadianceField from_checkpoint(const Checkpoint& ckpt) {
    check(ckpt.tag == kCheckpointTag,
          "expected a '" + std::string(kCheckpointTag) + "' checkpoint, got '" +
              ckpt.tag + "'");
    const FieldConfig cfg = FieldConfig::from_json(ckpt.meta.at("config"));
    Aabb<S> bounds;
    for (int i = 0; i < 3; ++i) {
      bounds.lo[i] = S(ckpt.meta.at("bounds_lo")[i].template get<double>());
      bounds.hi[i] = S(ckpt.meta.at("bounds_hi")[i].template get<double>());
    }
    RadianceField field(cfg, bounds, Rng(1));
    for (int i = 0; i < 3; ++i)
      field.background_[i] =
          S(ckpt.meta.at("background")[i].template get<double>());
    auto views = field.param_views();
    for (auto& v : views) {
      const auto it = ckpt.tensors.find(v.name);
      check(it != ckpt.tensors.end(), "checkpoint missing tensor " + v.name);
      check(it->second.data.size() == v.size,
            "checkpoint tensor size mismatch for " + v.name);
      Eigen::Map<ArrX<S>>(v.value, v.size) =
          it->second.data.template cast<S>();
    }
    return field;
  }

  GridEncoding<S>& density_encoding() { return density_enc_; }
  GridEncoding<S>& color_encoding() { return color_enc_; }
  Mlp<S>& density_net() { return density_net_; }
  Mlp<S>& color_net() { return color_net_; }

 private:
  FieldConfig cfg_;
  Aabb<S> bounds_;
  Vec3<S> background_ = Vec3<S>::Ones();
  GridEncoding<S> density_enc_, color_enc_;
  Mlp<S> density_net_, color_net_;
};

}  // namespace rgbdprior::fields
