#pragma once

#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "rgbdprior/common.hpp"
#include "rgbdprior/ddm.hpp"
#include "rgbdprior/field.hpp"
#include "rgbdprior/optimizer.hpp"
#include "rgbdprior/regularizers.hpp"
#include "rgbdprior/rendering.hpp"
#include "rgbdprior/scene.hpp"

namespace rgbdprior::train {

// Raised when optimization degenerates numerically beyond recovery.
struct NumericFailure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Named per-step random streams, forked off the run seed so every consumer
// draws from its own deterministic sequence.
inline constexpr uint64_t kRayStream = 0x72617973;
inline constexpr uint64_t kPatchStream = 0x70617463;
inline constexpr uint64_t kChoiceStream = 0x63686f69;

struct LambdaRamp {
  int start_step = 3000;
  int end_step = 8000;
  double max_value = 0;
};

struct TrainConfig {
  int total_steps = 12000;
  double tau_start = 0.1;
  int tau_warmup_steps = 2500;
  LambdaRamp lambda_dist_ramp;
  double lambda_fg = 0.01;
  double lambda_fr = 0.01;
  double ddm_depth_weight = 0;
  double ddm_rgb_weight = 0;
  int patch_size = 48;
  int rays_per_batch = 1024;
  int samples_per_ray = 64;
  double input_patch_probability = 0.25;
  std::string preset = "llff";
  fields::FieldConfig field;
  AdamConfig optim;
  uint64_t seed = 1;
  int depth_diag_every = 500;

  void validate() const {
    check(total_steps > 0, "config: total_steps must be positive");
    check(tau_start >= 0 && tau_start <= 1, "config: tau_start outside [0,1]");
    check(tau_warmup_steps > 0, "config: tau_warmup_steps must be positive");
    check(lambda_dist_ramp.start_step < lambda_dist_ramp.end_step &&
              lambda_dist_ramp.end_step <= total_steps,
          "config: distortion ramp needs start < end <= total_steps");
    check(lambda_dist_ramp.max_value >= 0 && lambda_fg >= 0 && lambda_fr >= 0 &&
              ddm_depth_weight >= 0 && ddm_rgb_weight >= 0,
          "config: loss weights must be nonnegative");
    check(patch_size >= 4, "config: patch_size must be at least 4");
    check(rays_per_batch > 0 && samples_per_ray >= 2, "config: bad batch shape");
    check(input_patch_probability >= 0 && input_patch_probability <= 1,
          "config: input_patch_probability outside [0,1]");
  }

  nlohmann::json to_json() const {
    return {{"total_steps", total_steps},
            {"tau_start", tau_start},
            {"tau_warmup_steps", tau_warmup_steps},
            {"lambda_dist_ramp",
             {{"start_step", lambda_dist_ramp.start_step},
              {"end_step", lambda_dist_ramp.end_step},
              {"max_value", lambda_dist_ramp.max_value}}},
            {"lambda_fg", lambda_fg},
            {"lambda_fr", lambda_fr},
            {"ddm_depth_weight", ddm_depth_weight},
            {"ddm_rgb_weight", ddm_rgb_weight},
            {"patch_size", patch_size},
            {"rays_per_batch", rays_per_batch},
            {"samples_per_ray", samples_per_ray},
            {"input_patch_probability", input_patch_probability},
            {"preset", preset},
            {"field", field.to_json()},
            {"optim",
             {{"lr", optim.lr},
              {"beta1", optim.beta1},
              {"beta2", optim.beta2},
              {"eps", optim.eps}}},
            {"seed", seed},
            {"depth_diag_every", depth_diag_every}};
  }

  static TrainConfig from_json(const nlohmann::json& j) {
    TrainConfig c;
    c.total_steps = j.at("total_steps");
    c.tau_start = j.at("tau_start");
    c.tau_warmup_steps = j.at("tau_warmup_steps");
    const auto& r = j.at("lambda_dist_ramp");
    c.lambda_dist_ramp = {r.at("start_step"), r.at("end_step"),
                          r.at("max_value")};
    c.lambda_fg = j.at("lambda_fg");
    c.lambda_fr = j.at("lambda_fr");
    c.ddm_depth_weight = j.at("ddm_depth_weight");
    c.ddm_rgb_weight = j.at("ddm_rgb_weight");
    c.patch_size = j.at("patch_size");
    c.rays_per_batch = j.at("rays_per_batch");
    c.samples_per_ray = j.at("samples_per_ray");
    c.input_patch_probability = j.at("input_patch_probability");
    c.preset = j.at("preset");
    c.field = fields::FieldConfig::from_json(j.at("field"));
    const auto& o = j.at("optim");
    c.optim = {o.at("lr"), o.at("beta1"), o.at("beta2"), o.at("eps")};
    c.seed = j.at("seed");
    c.depth_diag_every = j.at("depth_diag_every");
    return c;
  }
};

// Distortion-weight ceiling per dataset preset.
inline double lambda_dist_max(const std::string& preset) {
  if (preset == "llff") return 1.5e-5;
  if (preset == "dtu") return 1e-4;
  if (preset == "synthetic") return 1e-4;
  throw std::invalid_argument("unknown preset: " + preset);
}

// Built-in defaults per dataset family. The per-patch score weights follow the
// published per-dataset values; "synthetic" mirrors the object-centric (DTU)
// choices for the in-repo generated scenes.
inline TrainConfig preset_config(const std::string& preset) {
  TrainConfig c;
  c.preset = preset;
  c.lambda_dist_ramp.max_value = lambda_dist_max(preset);
  if (preset == "llff") {
    c.ddm_depth_weight = 4e-7;
    c.ddm_rgb_weight = 3e-6;
  } else if (preset == "dtu" || preset == "synthetic") {
    c.ddm_depth_weight = 4e-6;
    c.ddm_rgb_weight = 3e-5;
  }
  if (preset == "dtu") c.lambda_fr = 0;  // object masks replace the frustum term
  return c;
}

// Continuous noise level fed to the score model: linear from tau_start at
// step 0 down to 0 at tau_warmup_steps, and 0 from there on.
inline double tau_schedule(int step, double tau_start, int tau_warmup_steps) {
  check(step >= 0, "tau_schedule: negative step");
  if (step >= tau_warmup_steps) return 0.0;
  return tau_start * (1.0 - double(step) / double(tau_warmup_steps));
}

inline double lambda_dist_schedule(int step, const LambdaRamp& ramp) {
  check(step >= 0, "lambda_dist_schedule: negative step");
  if (step <= ramp.start_step) return 0.0;
  if (step >= ramp.end_step) return ramp.max_value;
  return ramp.max_value * double(step - ramp.start_step) /
         double(ramp.end_step - ramp.start_step);
}

// Preset form with the published breakpoints.
inline double lambda_dist_schedule(int step, const std::string& preset) {
  return lambda_dist_schedule(step, LambdaRamp{3000, 8000,
                                               lambda_dist_max(preset)});
}

// Draws novel viewpoints by convex interpolation between two training poses
// plus a small random rotation, keeping the first pose's intrinsics.
template <typename S>
struct VirtualCameraSampler {
  std::vector<CameraPose<S>> poses;
  S max_jitter_deg = S(5);

  CameraPose<S> sample(Rng& rng) const {
    check(!poses.empty(), "virtual camera sampler has no poses");
    const size_t n = poses.size();
    const size_t i = size_t(rng.uniform_int(n));
    size_t j = i;
    if (n > 1) {
      j = size_t(rng.uniform_int(n - 1));
      if (j >= i) ++j;
    }
    const S t = S(rng.uniform());
    CameraPose<S> cam = poses[i];
    const Vec3<S> pos =
        (S(1) - t) * poses[i].origin() + t * poses[j].origin();
    Eigen::Quaternion<S> qa(poses[i].rotation());
    Eigen::Quaternion<S> qb(poses[j].rotation());
    Eigen::Quaternion<S> q = qa.slerp(t, qb);

    Vec3<S> axis(S(rng.normal()), S(rng.normal()), S(rng.normal()));
    const S len = axis.norm();
    axis = len > S(1e-8) ? Vec3<S>(axis / len) : Vec3<S>::UnitZ();
    const S angle =
        S(rng.uniform()) * max_jitter_deg * S(M_PI) / S(180);
    q = Eigen::Quaternion<S>(Eigen::AngleAxis<S>(angle, axis)) * q;

    cam.c2w.template topLeftCorner<3, 3>() = q.toRotationMatrix();
    cam.c2w.template topRightCorner<3, 1>() = pos;
    return cam;
  }
};

struct StepDiagnostics {
  int step = 0;
  double loss_photo = 0, loss_fg = 0, loss_fr = 0, loss_dist = 0;
  double ddm_eps_rms = 0;  // RMS of the raw noise prediction on the patch
  double gn_photo = 0, gn_fg = 0, gn_fr = 0, gn_dist = 0, gn_ddm = 0;
  double tau = 0;
  double lambda_dist = 0;
  bool aborted = false;          // non-finite gradient; parameters untouched
  bool has_mean_depth = false;
  double mean_train_depth = 0;   // periodic collapse diagnostic

  nlohmann::json to_json() const {
    nlohmann::json j = {{"step", step},
                        {"losses",
                         {{"photo", loss_photo},
                          {"fg", loss_fg},
                          {"fr", loss_fr},
                          {"dist", loss_dist},
                          {"ddm_eps_rms", ddm_eps_rms}}},
                        {"grad_norms",
                         {{"photo", gn_photo},
                          {"fg", gn_fg},
                          {"fr", gn_fr},
                          {"dist", gn_dist},
                          {"ddm", gn_ddm}}},
                        {"tau", tau},
                        {"lambda_dist", lambda_dist}};
    if (aborted) j["aborted"] = true;
    if (has_mean_depth) j["mean_train_depth"] = mean_train_depth;
    return j;
  }
};

// Fits a radiance field to posed images: photometric term plus the geometric
// regularizers on every ray batch, and an injected denoiser score gradient on
// one rendered patch per step.
template <typename S>
class Trainer {
 public:
  struct TrainRay {
    int view = 0, x = 0, y = 0;
  };

  Trainer(const data::SceneDataset& scene, TrainConfig cfg,
          std::optional<ddm::DdmModel<S>> ddm_model)
      : scene_(scene),
        cfg_(std::move(cfg)),
        ddm_(std::move(ddm_model)),
        root_(cfg_.seed),
        field_(cfg_.field,
               Aabb<S>{Vec3<S>::Constant(S(-scene.scene_scale)),
                       Vec3<S>::Constant(S(scene.scene_scale))},
               Rng(cfg_.seed).fork(0x6669656c)),
        optim_(field_.param_views(), cfg_.optim) {
    cfg_.validate();
    check(!scene_.images.empty(), "training needs at least one posed image");
    check(!scene_.train_indices.empty(), "no training views selected");
    if (ddm_active())
      check(ddm_.has_value(),
            "score weights are positive but no denoiser checkpoint was given");
    for (const int v : scene_.train_indices) {
      check(v >= 0 && v < scene_.n_views(), "training view index out of range");
      const auto cam = scene_.cameras[size_t(v)].template cast<S>();
      frustums_.cameras.push_back(cam);
      sampler_.poses.push_back(cam);
      check(cfg_.patch_size <= cam.width && cfg_.patch_size <= cam.height,
            "config: patch_size exceeds the image extent");
    }
    for (const auto& view : optim_.views())
      accum_.push_back(ArrX<S>::Zero(view.size));
  }

  const TrainConfig& config() const { return cfg_; }
  fields::RadianceField<S>& field() { return field_; }
  const fields::RadianceField<S>& field() const { return field_; }
  const data::SceneDataset& scene() const { return scene_; }

  bool ddm_active() const {
    return cfg_.ddm_depth_weight > 0 || cfg_.ddm_rgb_weight > 0;
  }

  // Per-purpose random stream for one step; pure in the trainer state.
  Rng stream(uint64_t tag, int step) const {
    return root_.fork(tag, uint64_t(step));
  }

  // The ray batch a given step trains on: uniform over training views and
  // pixels, reproducible from the step index alone.
  std::vector<TrainRay> sample_ray_batch(int step) const {
    Rng rng = stream(kRayStream, step);
    std::vector<TrainRay> rays(size_t(cfg_.rays_per_batch));
    for (auto& r : rays) {
      const int view =
          scene_.train_indices[rng.uniform_int(scene_.train_indices.size())];
      const auto& cam = scene_.cameras[size_t(view)];
      r.view = view;
      r.x = int(rng.uniform_int(uint64_t(cam.width)));
      r.y = int(rng.uniform_int(uint64_t(cam.height)));
    }
    return rays;
  }

  StepDiagnostics training_step(int step) {
    StepDiagnostics diag;
    diag.step = step;
    diag.tau = tau_schedule(step, cfg_.tau_start, cfg_.tau_warmup_steps);
    diag.lambda_dist = lambda_dist_schedule(step, cfg_.lambda_dist_ramp);

    // Forward pass over the ray batch, keeping per-ray workspaces so each
    // loss term can run its own exact backward pass.
    const std::vector<TrainRay> rays = sample_ray_batch(step);
    const size_t R = rays.size();
    std::vector<RayState> states(R);
    MatX<S> rendered(3, Eigen::Index(R)), target(3, Eigen::Index(R));
    double depth_sum = 0;
    for (size_t r = 0; r < R; ++r) {
      forward_ray(rays[r], states[r]);
      rendered.col(Eigen::Index(r)) = states[r].res.C;
      for (int c = 0; c < 3; ++c)
        target(c, Eigen::Index(r)) =
            S(scene_.images[size_t(rays[r].view)].at(c, rays[r].y, rays[r].x));
      depth_sum += double(states[r].res.D);
    }
    if (cfg_.depth_diag_every > 0 && step % cfg_.depth_diag_every == 0) {
      diag.has_mean_depth = true;
      diag.mean_train_depth = depth_sum / double(R);
    }

    // Scalar diagnostics for every term, weighted or not.
    diag.loss_photo = double(reg::photometric_loss(rendered, target));
    for (size_t r = 0; r < R; ++r) {
      diag.loss_fg += double(reg::foreground_loss(states[r].batch));
      diag.loss_fr +=
          double(reg::frustum_loss(states[r].batch, states[r].mask));
      diag.loss_dist +=
          double(reg::distortion_loss(states[r].batch, states[r].res.D));
    }
    diag.loss_fg /= double(R);
    diag.loss_fr /= double(R);
    diag.loss_dist /= double(R);

    // Term-by-term backward passes accumulated into one total gradient.
    const auto& views = optim_.views();
    for (auto& a : accum_) a.setZero();

    zero_grads(views);
    const MatX<S> dC_photo = reg::photometric_loss_backward(rendered, target);
    for (size_t r = 0; r < R; ++r)
      backward_ray(states[r], Vec3<S>(dC_photo.col(Eigen::Index(r))), S(0),
                   nullptr);
    diag.gn_photo = double(grad_norm(views));
    accumulate(views);

    if (cfg_.lambda_fg > 0) {
      zero_grads(views);
      for (size_t r = 0; r < R; ++r) {
        const ArrX<S> dw = reg::foreground_loss_backward(
            states[r].batch, S(cfg_.lambda_fg) / S(R));
        backward_ray(states[r], Vec3<S>::Zero(), S(0), &dw);
      }
      diag.gn_fg = double(grad_norm(views));
      accumulate(views);
    }

    if (cfg_.lambda_fr > 0) {
      zero_grads(views);
      for (size_t r = 0; r < R; ++r) {
        const ArrX<S> dw =
            reg::frustum_loss_backward(states[r].mask, S(cfg_.lambda_fr) / S(R));
        backward_ray(states[r], Vec3<S>::Zero(), S(0), &dw);
      }
      diag.gn_fr = double(grad_norm(views));
      accumulate(views);
    }

    if (diag.lambda_dist > 0) {
      zero_grads(views);
      for (size_t r = 0; r < R; ++r) {
        const reg::DistortionGrad<S> g = reg::distortion_loss_backward(
            states[r].batch, states[r].res.D, S(diag.lambda_dist) / S(R));
        backward_ray(states[r], Vec3<S>::Zero(), g.dD, &g.dweight);
      }
      diag.gn_dist = double(grad_norm(views));
      accumulate(views);
    }

    if (ddm_active()) {
      zero_grads(views);
      diag.ddm_eps_rms = double(score_step(step, diag.tau));
      diag.gn_ddm = double(grad_norm(views));
      accumulate(views);
    }

    // Apply the assembled gradient, unless it went non-finite.
    for (size_t k = 0; k < accum_.size(); ++k)
      Eigen::Map<ArrX<S>>(views[k].grad, views[k].size) = accum_[k];
    if (!grads_finite(views)) {
      diag.aborted = true;
      return diag;
    }
    optim_.step(S(cosine_lr_scale(step, cfg_.total_steps)));
    return diag;
  }

  // Runs the full schedule; stops with NumericFailure after 50 consecutive
  // aborted steps.
  void fit(const std::function<void(const StepDiagnostics&)>& on_step = {}) {
    int consecutive_aborts = 0;
    for (int step = 0; step < cfg_.total_steps; ++step) {
      const StepDiagnostics diag = training_step(step);
      if (on_step) on_step(diag);
      consecutive_aborts = diag.aborted ? consecutive_aborts + 1 : 0;
      if (consecutive_aborts >= 50)
        throw NumericFailure(
            "training aborted: 50 consecutive non-finite gradient steps");
    }
  }

 private:
  struct RayState {
    render::RaySampleBatch<S> batch;
    render::RenderResult<S> res;
    typename fields::RadianceField<S>::DensityWs dws;
    typename fields::RadianceField<S>::ColorWs cws;
    ArrX<S> mask;  // frustum-count mask, constant under differentiation
  };

  void forward_ray(const TrainRay& tr, RayState& rs) {
    const auto& cam = frustum_camera(tr.view);
    const Ray<S> ray = cam.pixel_center_ray(tr.x, tr.y);
    rs.batch.origin = ray.origin;
    rs.batch.dir = ray.dir;
    rs.batch.t_near = cam.near;
    rs.batch.t_far = cam.far;
    Rng dummy(0);
    rs.batch.t = render::sample_ray(rs.batch.t_near, rs.batch.t_far,
                                    cfg_.samples_per_ray, false, dummy);
    const Eigen::Index n = rs.batch.t.size();
    MatX<S> pts(3, n), sh(16, n);
    const Eigen::Matrix<S, 16, 1> shd = fields::sh16<S>(rs.batch.dir);
    std::vector<Vec3<S>> pts_v(size_t(n), Vec3<S>::Zero());
    for (Eigen::Index i = 0; i < n; ++i) {
      pts.col(i) = rs.batch.origin + rs.batch.t[i] * rs.batch.dir;
      pts_v[size_t(i)] = pts.col(i);
      sh.col(i) = shd;
    }
    rs.batch.sigma = field_.density_forward(pts, &rs.dws);
    rs.batch.color = field_.color_forward(pts, sh, &rs.cws);
    rs.res = render::composite(rs.batch, field_.background());
    rs.mask = reg::frustum_mask(pts_v, frustums_);
  }

  void backward_ray(const RayState& rs, const Vec3<S>& dC, S dD,
                    const ArrX<S>* dw_direct) {
    const render::CompositeGrad<S> g = render::composite_backward(
        rs.batch, rs.res, field_.background(), dC, dD, dw_direct);
    field_.density_backward(rs.dws, g.dsigma);
    field_.color_backward(rs.cws, g.dcolor);
  }

  const CameraPose<S>& frustum_camera(int view) const {
    for (size_t i = 0; i < scene_.train_indices.size(); ++i)
      if (scene_.train_indices[i] == view) return frustums_.cameras[i];
    throw std::logic_error("ray references a non-training view");
  }

  // One injected score-gradient step on a rendered patch; returns the raw
  // noise-prediction RMS diagnostic.
  S score_step(int step, double tau) {
    Rng rng_choice = stream(kChoiceStream, step);
    Rng rng_patch = stream(kPatchStream, step);
    const bool from_input =
        rng_choice.uniform() < cfg_.input_patch_probability;
    const int P = cfg_.patch_size;
    const S scale = S(scene_.scene_scale);

    CameraPose<S> cam;
    int image_view = -1;
    if (from_input) {
      const size_t k = size_t(rng_patch.uniform_int(scene_.train_indices.size()));
      image_view = scene_.train_indices[k];
      cam = frustums_.cameras[k];
    } else {
      cam = sampler_.sample(rng_patch);
    }
    const int x0 = int(rng_patch.uniform_int(uint64_t(cam.width - P + 1)));
    const int y0 = int(rng_patch.uniform_int(uint64_t(cam.height - P + 1)));

    render::PatchRender<S> pr =
        render::render_patch(field_, cam, x0, y0, P, cfg_.samples_per_ray,
                             scale, false, rng_patch);
    if (from_input) {
      // Real image colors; the depth channel stays rendered so the injected
      // gradient still has a differentiable path into the field.
      const auto& img = scene_.images[size_t(image_view)];
      for (int py = 0; py < P; ++py)
        for (int px = 0; px < P; ++px)
          pr.patch.set_rgb(py, px,
                           Vec3<S>(S(img.at(0, y0 + py, x0 + px)),
                                   S(img.at(1, y0 + py, x0 + px)),
                                   S(img.at(2, y0 + py, x0 + px))));
    }

    S eps_rms = S(0);
    Tensor3<S> g = ddm::score_gradient(ddm_->net, ddm_->schedule, pr.patch,
                                       S(tau), &eps_rms);
    // Weight the normalized noise prediction per channel group and inject it
    // as a descent gradient: the update then moves the patch against the
    // predicted noise, i.e. up the model's log-density.
    for (int c = 0; c < 4; ++c) {
      const S w = c < 3 ? S(cfg_.ddm_rgb_weight) : S(cfg_.ddm_depth_weight);
      // Image-sourced colors are constants; only rendered channels carry
      // gradient back into the field.
      const S live = (from_input && c < 3) ? S(0) : S(1);
      g.channel(c) *= w * live;
    }
    render::patch_backward(field_, pr, g, scale);
    return eps_rms;
  }

  void accumulate(const std::vector<ParamView<S>>& views) {
    for (size_t k = 0; k < views.size(); ++k)
      accum_[k] += Eigen::Map<const ArrX<S>>(views[k].grad, views[k].size);
  }

  const data::SceneDataset& scene_;
  TrainConfig cfg_;
  std::optional<ddm::DdmModel<S>> ddm_;
  Rng root_;
  fields::RadianceField<S> field_;
  Adam<S> optim_;
  reg::FrustumSet<S> frustums_;
  VirtualCameraSampler<S> sampler_;
  std::vector<ArrX<S>> accum_;
};

}  // namespace rgbdprior::train
