// Command-line front end: wires configs, checkpoints and datasets into the
// pipeline stages. Exit codes: 0 success, 2 input error, 3 numeric failure.

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "rgbdprior/ddm.hpp"
#include "rgbdprior/ddm_train.hpp"
#include "rgbdprior/field.hpp"
#include "rgbdprior/io.hpp"
#include "rgbdprior/mesh.hpp"
#include "rgbdprior/metrics.hpp"
#include "rgbdprior/rendering.hpp"
#include "rgbdprior/scene.hpp"
#include "rgbdprior/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace rgbdprior;

namespace {

std::string iso_timestamp() {
  const std::time_t now = std::time(nullptr);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&now));
  return buf;
}

// RGBDPRIOR_SEED beats every configured seed source.
uint64_t resolve_seed(uint64_t configured) {
  if (const char* env = std::getenv("RGBDPRIOR_SEED")) {
    char* end = nullptr;
    const unsigned long long v = std::strtoull(env, &end, 10);
    check(end && *end == '\0', "RGBDPRIOR_SEED is not an integer");
    return uint64_t(v);
  }
  return configured;
}

json load_config_file(const std::string& path) {
  if (path.empty()) return json::object();
  json j = json::parse(read_file(path));
  check(j.is_object(), "config file must hold a JSON object: " + path);
  return j;
}

// One manifest per run directory: command, effective config, seed, paths,
// checkpoint content hashes, wall-clock bounds.
struct Manifest {
  std::string command;
  json config = json::object();
  uint64_t seed = 0;
  json inputs = json::object();
  json outputs = json::object();
  std::string started = iso_timestamp();

  void add_checkpoint_hash(const std::string& label, const std::string& path) {
    hashes_[label] = {{"path", path}, {"sha256", sha256_hex(read_file(path))}};
  }

  void write(const std::string& out_dir) const {
    const json m = {{"command", command},   {"config", config},
                    {"seed", seed},         {"inputs", inputs},
                    {"outputs", outputs},   {"checkpoint_hashes", hashes_},
                    {"started", started},   {"finished", iso_timestamp()}};
    write_file((fs::path(out_dir) / "manifest.json").string(), m.dump(2) + "\n");
  }

 private:
  json hashes_ = json::object();
};

void ensure_dir(const std::string& dir) {
  check(!dir.empty(), "missing output directory");
  fs::create_directories(dir);
}

// Inverse-depth visualization value in [0,1]: s/(s+D).
Eigen::ArrayXXf inverse_depth01(const Eigen::ArrayXXf& depth, float s) {
  return s / (s + depth.max(0.0f));
}

// --- gen-scene -------------------------------------------------------------------

struct GenSceneArgs {
  std::string out;
  uint64_t seed = 1;
  int views = 12;
  int size = 128;
};

int cmd_gen_scene(const GenSceneArgs& a) {
  ensure_dir(a.out);
  const uint64_t seed = resolve_seed(a.seed);
  data::SceneSpec spec = data::make_demo_scene(seed, a.views, a.size);
  const data::SceneDataset scene = data::generate_synthetic_scene(spec);
  data::save_scene(a.out, scene);

  Manifest m;
  m.command = "gen-scene";
  m.config = {{"views", a.views}, {"size", a.size}};
  m.seed = seed;
  m.outputs = {{"scene", a.out}};
  m.write(a.out);
  std::cout << "wrote " << scene.n_views() << " views to " << a.out << "\n";
  return 0;
}

// --- build-corpus ----------------------------------------------------------------

struct BuildCorpusArgs {
  std::vector<std::string> scenes;
  std::string out;
  int patches_per_image = 64;
  int patch_size = 48;
  uint64_t seed = 1;
};

int cmd_build_corpus(const BuildCorpusArgs& a) {
  check(!a.scenes.empty(), "build-corpus needs at least one --scene");
  ensure_dir(a.out);
  const uint64_t seed = resolve_seed(a.seed);
  std::vector<data::SceneDataset> scenes;
  for (const auto& dir : a.scenes) scenes.push_back(data::load_scene(dir, 0));
  const data::PatchCorpus corpus = data::build_patch_corpus(
      scenes, a.patches_per_image, a.patch_size, seed);
  const std::string corpus_path = (fs::path(a.out) / "corpus.bin").string();
  data::save_patch_corpus(corpus_path, corpus);

  Manifest m;
  m.command = "build-corpus";
  m.config = {{"patches_per_image", a.patches_per_image},
              {"patch_size", a.patch_size}};
  m.seed = seed;
  m.inputs = {{"scenes", a.scenes}};
  m.outputs = {{"corpus", corpus_path}, {"count", corpus.count()}};
  m.write(a.out);
  std::cout << "corpus: " << corpus.count() << " patches of side "
            << corpus.patch_side << "\n";
  return 0;
}

// --- train-ddm -------------------------------------------------------------------

struct TrainDdmArgs {
  std::string corpus, out, config_file;
  int steps = -1, batch = -1, microbatch = -1;
  double lr = -1;
  int c0 = -1, c1 = -1, c2 = -1, temb = -1;
  uint64_t seed = 1;
  bool seed_set = false;
  bool resume = false;
};

int cmd_train_ddm(const TrainDdmArgs& a) {
  ensure_dir(a.out);
  const json file = load_config_file(a.config_file);

  // Built-in defaults, then config file, then explicit flags.
  json cfg = {{"steps", 50000},   {"batch_size", 32}, {"lr", 3e-4},
              {"microbatch", 8},  {"c0", 64},         {"c1", 128},
              {"c2", 256},        {"temb", 64},       {"seed", 1}};
  for (const auto& [k, v] : file.items()) cfg[k] = v;
  if (a.steps >= 0) cfg["steps"] = a.steps;
  if (a.batch >= 0) cfg["batch_size"] = a.batch;
  if (a.microbatch >= 0) cfg["microbatch"] = a.microbatch;
  if (a.lr >= 0) cfg["lr"] = a.lr;
  if (a.c0 >= 0) cfg["c0"] = a.c0;
  if (a.c1 >= 0) cfg["c1"] = a.c1;
  if (a.c2 >= 0) cfg["c2"] = a.c2;
  if (a.temb >= 0) cfg["temb"] = a.temb;
  if (a.seed_set) cfg["seed"] = a.seed;
  const uint64_t seed = resolve_seed(cfg["seed"].get<uint64_t>());
  cfg["seed"] = seed;

  const data::PatchCorpus corpus = data::load_patch_corpus(a.corpus);
  const ddm::NoiseSchedule<float> sched = ddm::NoiseSchedule<float>::linear();
  const std::string ckpt_path = (fs::path(a.out) / "ddm.ckpt").string();
  const std::string curve_path = (fs::path(a.out) / "loss_curve.jsonl").string();

  ddm::DenoiserNetwork<float> net;
  int64_t start_step = 0;
  if (a.resume) {
    const Checkpoint prev = load_checkpoint(ckpt_path);
    ddm::DdmModel<float> model = ddm::ddm_from_checkpoint<float>(prev);
    net = std::move(model.net);
    start_step = prev.meta.value("steps_done", int64_t(0));
    check(model.patch_side == corpus.patch_side,
          "resume: corpus patch side changed");
  } else {
    ddm::DenoiserConfig nc;
    nc.c0 = cfg["c0"];
    nc.c1 = cfg["c1"];
    nc.c2 = cfg["c2"];
    nc.temb_dim = cfg["temb"];
    net = ddm::DenoiserNetwork<float>(nc, Rng(seed));
  }

  ddm::DdmFitConfig fc;
  fc.steps = cfg["steps"];
  fc.batch_size = cfg["batch_size"];
  fc.lr = cfg["lr"];
  fc.seed = seed;
  fc.microbatch = cfg["microbatch"];
  ddm::DdmFit<float> fit(net, sched, corpus, fc);

  std::ofstream curve(curve_path, a.resume ? std::ios::app : std::ios::trunc);
  check(bool(curve), "cannot open loss curve file: " + curve_path);
  fit.run(start_step, [&](int64_t s, double loss) {
    curve << json({{"step", s}, {"loss", loss}}).dump() << "\n";
    if ((s + 1) % 500 == 0)
      std::cout << "step " << (s + 1) << " loss " << loss << "\n";
  });
  curve.flush();

  Checkpoint ckpt = ddm::ddm_to_checkpoint(net, sched, corpus.patch_side,
                                           double(corpus.scene_scale));
  ckpt.meta["steps_done"] = start_step + fc.steps;
  save_checkpoint(ckpt_path, ckpt);

  Manifest m;
  m.command = "train-ddm";
  m.config = cfg;
  m.seed = seed;
  m.inputs = {{"corpus", a.corpus}, {"resume", a.resume}};
  m.outputs = {{"checkpoint", ckpt_path}, {"loss_curve", curve_path},
               {"steps_done", start_step + fc.steps}};
  m.add_checkpoint_hash("ddm", ckpt_path);
  m.write(a.out);
  return 0;
}

// --- sample-ddm ------------------------------------------------------------------

struct SampleDdmArgs {
  std::string ddm, out;
  int count = 16;
  uint64_t seed = 1;
};

int cmd_sample_ddm(const SampleDdmArgs& a) {
  ensure_dir(a.out);
  const uint64_t seed = resolve_seed(a.seed);
  ddm::DdmModel<float> model =
      ddm::ddm_from_checkpoint<float>(load_checkpoint(a.ddm));
  const int P = model.patch_side;
  const std::vector<ddm::RGBDPatch<float>> samples = ddm::ancestral_sample(
      model.net, model.schedule, a.count, P, Rng(seed));

  const int cols = int(std::ceil(std::sqrt(double(a.count))));
  const int rows = (a.count + cols - 1) / cols;
  Tensor3f rgb(3, rows * P, cols * P);
  rgb.set_zero();
  Eigen::ArrayXXf depth01 = Eigen::ArrayXXf::Zero(rows * P, cols * P);
  for (int k = 0; k < a.count; ++k) {
    const int gy = (k / cols) * P, gx = (k % cols) * P;
    for (int y = 0; y < P; ++y)
      for (int x = 0; x < P; ++x) {
        const Vec3f c = samples[size_t(k)].rgb01(y, x);
        for (int ci = 0; ci < 3; ++ci) rgb.at(ci, gy + y, gx + x) = c[ci];
        // Encoded depth in [-1,1] maps linearly onto the inverse-depth ramp.
        depth01(gy + y, gx + x) =
            0.5f * (samples[size_t(k)].values.at(3, y, x) + 1.0f);
      }
  }
  const std::string rgb_path = (fs::path(a.out) / "samples_rgb.png").string();
  const std::string depth_path =
      (fs::path(a.out) / "samples_depth.png").string();
  write_png(rgb_path, rgb);
  write_png_gray16(depth_path, depth01);

  Manifest m;
  m.command = "sample-ddm";
  m.config = {{"count", a.count}};
  m.seed = seed;
  m.inputs = {{"ddm", a.ddm}};
  m.outputs = {{"rgb", rgb_path}, {"depth", depth_path}};
  m.add_checkpoint_hash("ddm", a.ddm);
  m.write(a.out);
  return 0;
}

// --- fit-nerf --------------------------------------------------------------------

struct FitNerfArgs {
  std::string scene, out, preset, ddm, config_file;
  int views = 0;  // 0 = train on every view
  int steps = -1, rays = -1, samples = -1, patch = -1;
  int hidden = -1, levels = -1, base_res = -1;
  double lambda_fg = -1, lambda_fr = -1, lambda_dist_max = -1;
  int ramp_start = -1, ramp_end = -1;
  double tau_start = -1;
  int tau_warmup = -1;
  double ddm_rgb = -1, ddm_depth = -1;
  double lr = -1;
  uint64_t seed = 1;
  bool seed_set = false;
};

int cmd_fit_nerf(const FitNerfArgs& a) {
  ensure_dir(a.out);
  const json file = load_config_file(a.config_file);

  std::string preset = "synthetic";
  if (file.contains("preset")) preset = file["preset"];
  if (!a.preset.empty()) preset = a.preset;

  json cfg_json = train::preset_config(preset).to_json();
  for (const auto& [k, v] : file.items()) cfg_json[k] = v;
  cfg_json["preset"] = preset;
  train::TrainConfig cfg = train::TrainConfig::from_json(cfg_json);

  if (a.steps >= 0) cfg.total_steps = a.steps;
  if (a.rays >= 0) cfg.rays_per_batch = a.rays;
  if (a.samples >= 0) cfg.samples_per_ray = a.samples;
  if (a.patch >= 0) cfg.patch_size = a.patch;
  if (a.hidden >= 0) cfg.field.hidden = a.hidden;
  if (a.levels >= 0) cfg.field.grid.levels = a.levels;
  if (a.base_res >= 0) cfg.field.grid.base_res = a.base_res;
  if (a.lambda_fg >= 0) cfg.lambda_fg = a.lambda_fg;
  if (a.lambda_fr >= 0) cfg.lambda_fr = a.lambda_fr;
  if (a.lambda_dist_max >= 0) cfg.lambda_dist_ramp.max_value = a.lambda_dist_max;
  if (a.ramp_start >= 0) cfg.lambda_dist_ramp.start_step = a.ramp_start;
  if (a.ramp_end >= 0) cfg.lambda_dist_ramp.end_step = a.ramp_end;
  if (a.tau_start >= 0) cfg.tau_start = a.tau_start;
  if (a.tau_warmup >= 0) cfg.tau_warmup_steps = a.tau_warmup;
  if (a.ddm_rgb >= 0) cfg.ddm_rgb_weight = a.ddm_rgb;
  if (a.ddm_depth >= 0) cfg.ddm_depth_weight = a.ddm_depth;
  if (a.lr >= 0) cfg.optim.lr = a.lr;
  if (a.seed_set) cfg.seed = a.seed;
  cfg.seed = resolve_seed(cfg.seed);

  // Keep the distortion ramp inside shortened desk-scale runs unless the
  // breakpoints were pinned explicitly.
  if (cfg.lambda_dist_ramp.end_step > cfg.total_steps && a.ramp_end < 0 &&
      !file.contains("lambda_dist_ramp")) {
    cfg.lambda_dist_ramp.start_step = cfg.total_steps / 4;
    cfg.lambda_dist_ramp.end_step = (2 * cfg.total_steps) / 3;
  }

  const data::SceneDataset scene = data::load_scene(a.scene, a.views);

  std::optional<ddm::DdmModel<float>> model;
  std::string variant = "geometric-baseline";
  if (!a.ddm.empty()) {
    model = ddm::ddm_from_checkpoint<float>(load_checkpoint(a.ddm));
    variant = "full";
  } else {
    const bool explicit_weights = a.ddm_rgb >= 0 || a.ddm_depth >= 0 ||
                                  file.contains("ddm_rgb_weight") ||
                                  file.contains("ddm_depth_weight");
    check(!explicit_weights || (cfg.ddm_rgb_weight == 0 &&
                                cfg.ddm_depth_weight == 0),
          "score weights are positive but no --ddm checkpoint was given");
    // Preset defaults only apply when a denoiser is actually supplied.
    cfg.ddm_rgb_weight = 0;
    cfg.ddm_depth_weight = 0;
  }

  train::Trainer<float> trainer(scene, cfg, std::move(model));
  const std::string log_path = (fs::path(a.out) / "train_log.jsonl").string();
  std::ofstream log(log_path, std::ios::trunc);
  check(bool(log), "cannot open training log: " + log_path);
  trainer.fit([&](const train::StepDiagnostics& d) {
    log << d.to_json().dump() << "\n";
    if ((d.step + 1) % 500 == 0)
      std::cout << "step " << (d.step + 1) << " photo " << d.loss_photo << "\n";
  });
  log.flush();

  Checkpoint ckpt = trainer.field().to_checkpoint();
  ckpt.meta["variant"] = variant;
  ckpt.meta["preset"] = trainer.config().preset;
  ckpt.meta["views"] = a.views;
  ckpt.meta["scene_scale"] = scene.scene_scale;
  const std::string ckpt_path = (fs::path(a.out) / "field.ckpt").string();
  save_checkpoint(ckpt_path, ckpt);

  Manifest m;
  m.command = "fit-nerf";
  m.config = trainer.config().to_json();
  m.config["variant"] = variant;
  m.seed = trainer.config().seed;
  m.inputs = {{"scene", a.scene}, {"views", a.views}, {"ddm", a.ddm}};
  m.outputs = {{"checkpoint", ckpt_path}, {"log", log_path}};
  m.add_checkpoint_hash("field", ckpt_path);
  if (!a.ddm.empty()) m.add_checkpoint_hash("ddm", a.ddm);
  m.write(a.out);
  return 0;
}

// --- render ----------------------------------------------------------------------

struct RenderArgs {
  std::string field, scene, out, subset = "all";
  int views = 0;
  int samples = 96;
};

int cmd_render(const RenderArgs& a) {
  ensure_dir(a.out);
  const Checkpoint ckpt = load_checkpoint(a.field);
  fields::RadianceField<float> field =
      fields::RadianceField<float>::from_checkpoint(ckpt);
  const data::SceneDataset scene = data::load_scene(a.scene, a.views);

  std::vector<int> targets;
  if (a.subset == "train") {
    targets = scene.train_indices;
  } else if (a.subset == "holdout") {
    targets = scene.holdout_indices();
  } else if (a.subset == "all") {
    for (int i = 0; i < scene.n_views(); ++i) targets.push_back(i);
  } else {
    throw std::invalid_argument("--subset must be all, train or holdout");
  }
  check(!targets.empty(), "no views selected to render");

  json outputs = json::array();
  for (const int v : targets) {
    const auto cam = scene.cameras[size_t(v)].cast<float>();
    Tensor3f image;
    Eigen::ArrayXXf depth;
    render::render_image(field, cam, a.samples, image, depth);
    char color_name[32], depth_name[32];
    std::snprintf(color_name, sizeof(color_name), "render_%03d.png", v);
    std::snprintf(depth_name, sizeof(depth_name), "invdepth_%03d.png", v);
    write_png((fs::path(a.out) / color_name).string(), image);
    write_png_gray16((fs::path(a.out) / depth_name).string(),
                     inverse_depth01(depth, float(scene.scene_scale)));
    outputs.push_back({{"view", v}, {"color", color_name}, {"depth", depth_name}});
  }

  Manifest m;
  m.command = "render";
  m.config = {{"subset", a.subset}, {"samples_per_ray", a.samples}};
  m.inputs = {{"field", a.field}, {"scene", a.scene}};
  m.outputs = {{"images", outputs}};
  m.add_checkpoint_hash("field", a.field);
  m.write(a.out);
  return 0;
}

// --- extract-mesh ----------------------------------------------------------------

struct ExtractMeshArgs {
  std::string field, out, scene;
  int resolution = 128;
  double iso = 25.0;
  bool cull = false;
  bool use_masks = false;
  int views = 0;
  double tolerance_voxels = 1.0;
};

int cmd_extract_mesh(const ExtractMeshArgs& a) {
  ensure_dir(a.out);
  fields::RadianceField<float> field =
      fields::RadianceField<float>::from_checkpoint(load_checkpoint(a.field));
  TriMesh mesh = eval::extract_mesh(field, a.resolution, a.iso);
  if (mesh.empty())
    std::cerr << "warning: isosurface is empty at iso " << a.iso << "\n";

  const double voxel =
      double(field.bounds().extent().maxCoeff()) / double(a.resolution - 1);
  if (a.cull && !mesh.empty()) {
    check(!a.scene.empty(), "--cull needs --scene for the camera frustums");
    const data::SceneDataset scene = data::load_scene(a.scene, a.views);
    std::vector<CameraPosed> cams;
    std::vector<Eigen::ArrayXXf> masks;
    for (const int v : scene.train_indices) {
      cams.push_back(scene.cameras[size_t(v)]);
      if (a.use_masks) {
        check(size_t(v) < scene.object_masks.size(),
              "--use-masks: scene has no object masks");
        masks.push_back(scene.object_masks[size_t(v)]);
      }
    }
    mesh = eval::cull_mesh(mesh, cams, masks, a.tolerance_voxels * voxel);
  }

  const std::string mesh_path = (fs::path(a.out) / "mesh.ply").string();
  save_ply(mesh_path, mesh);

  Manifest m;
  m.command = "extract-mesh";
  m.config = {{"resolution", a.resolution},
              {"iso_sigma", a.iso},
              {"cull", a.cull},
              {"use_masks", a.use_masks},
              {"tolerance_voxels", a.tolerance_voxels}};
  m.inputs = {{"field", a.field}, {"scene", a.scene}};
  m.outputs = {{"mesh", mesh_path},
               {"vertices", mesh.verts.size()},
               {"faces", mesh.faces.size()}};
  m.add_checkpoint_hash("field", a.field);
  m.write(a.out);
  std::cout << "mesh: " << mesh.verts.size() << " vertices, "
            << mesh.faces.size() << " faces\n";
  return 0;
}

// --- evaluate --------------------------------------------------------------------

struct EvaluateArgs {
  std::string field, scene, out, mesh, lpips;
  int views = 3;
  int samples = 96;
  int chamfer_points = 100000;
  uint64_t seed = 1;
};

// External perceptual scores: a JSON object keyed by view index, or an array
// aligned with the held-out views in index order.
std::optional<double> lpips_for_view(const json& sidecar, int view, int pos) {
  if (sidecar.is_null()) return {};
  if (sidecar.is_array())
    return pos < int(sidecar.size()) ? std::optional<double>(sidecar[size_t(pos)])
                                     : std::nullopt;
  const std::string key = std::to_string(view);
  if (sidecar.contains(key)) return double(sidecar.at(key));
  return {};
}

int cmd_evaluate(const EvaluateArgs& a) {
  ensure_dir(a.out);
  fields::RadianceField<float> field =
      fields::RadianceField<float>::from_checkpoint(load_checkpoint(a.field));
  const data::SceneDataset scene = data::load_scene(a.scene, a.views);
  const std::vector<int> holdout = scene.holdout_indices();
  check(!holdout.empty(), "evaluate: no held-out views (use --views < total)");

  json sidecar;
  if (!a.lpips.empty()) {
    sidecar = json::parse(read_file(a.lpips));
    if (sidecar.is_object() && sidecar.contains("lpips"))
      sidecar = sidecar["lpips"];
  }

  std::vector<eval::ViewMetrics> rows;
  for (size_t k = 0; k < holdout.size(); ++k) {
    const int v = holdout[k];
    const auto cam = scene.cameras[size_t(v)].cast<float>();
    Tensor3f image;
    Eigen::ArrayXXf depth;
    render::render_image(field, cam, a.samples, image, depth);
    eval::ViewMetrics row;
    row.view = v;
    row.psnr = eval::psnr(image, scene.images[size_t(v)]);
    row.ssim = eval::ssim(image, scene.images[size_t(v)]);
    row.lpips = lpips_for_view(sidecar, v, int(k));
    rows.push_back(row);
  }
  eval::MetricReport report = eval::make_report(std::move(rows));

  Manifest m;
  m.command = "evaluate";
  if (!a.mesh.empty()) {
    if (!scene.has_gt_mesh) {
      std::cerr << "notice: scene has no ground-truth mesh; chamfer skipped\n";
    } else {
      const TriMesh pred = load_ply(a.mesh);
      check(!pred.faces.empty(), "predicted mesh has no faces: " + a.mesh);
      Rng rng(resolve_seed(a.seed));
      const auto pred_pts = eval::sample_mesh_points(pred, a.chamfer_points, rng);
      const auto gt_pts =
          eval::sample_mesh_points(scene.gt_mesh, a.chamfer_points, rng);
      report.chamfer_l1 = eval::chamfer_l1(pred_pts, gt_pts);
      save_ply_points((fs::path(a.out) / "pred_points.ply").string(), pred_pts);
      save_ply_points((fs::path(a.out) / "gt_points.ply").string(), gt_pts);
    }
  }

  const std::string report_path = (fs::path(a.out) / "metrics.json").string();
  write_file(report_path, report.to_json().dump(2) + "\n");

  m.config = {{"views", a.views},
              {"samples_per_ray", a.samples},
              {"chamfer_points", a.chamfer_points}};
  m.seed = resolve_seed(a.seed);
  m.inputs = {{"field", a.field}, {"scene", a.scene},
              {"mesh", a.mesh},   {"lpips", a.lpips}};
  m.outputs = {{"report", report_path}};
  m.add_checkpoint_hash("field", a.field);
  m.write(a.out);
  std::cout << report.to_json().dump(2) << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Radiance-field toolkit with a learned RGBD patch prior"};
  app.require_subcommand(1);

  GenSceneArgs gen;
  auto* cgen = app.add_subcommand("gen-scene", "Generate a synthetic scene");
  cgen->add_option("--out", gen.out, "Output scene directory")->required();
  cgen->add_option("--seed", gen.seed, "Scene randomization seed");
  cgen->add_option("--views", gen.views, "Number of ring cameras");
  cgen->add_option("--size", gen.size, "Image side in pixels");

  BuildCorpusArgs corpus;
  auto* ccorp = app.add_subcommand("build-corpus", "Build an RGBD patch corpus");
  ccorp->add_option("--scene", corpus.scenes, "Scene directory (repeatable)")
      ->required();
  ccorp->add_option("--out", corpus.out, "Output directory")->required();
  ccorp->add_option("--patches-per-image", corpus.patches_per_image,
                    "Windows sampled per image");
  ccorp->add_option("--patch-size", corpus.patch_size, "Patch side in pixels");
  ccorp->add_option("--seed", corpus.seed, "Sampling seed");

  TrainDdmArgs tddm;
  auto* ctddm = app.add_subcommand("train-ddm", "Train the patch denoiser");
  ctddm->add_option("--corpus", tddm.corpus, "Patch corpus file")->required();
  ctddm->add_option("--out", tddm.out, "Output directory")->required();
  ctddm->add_option("--config", tddm.config_file, "JSON config file");
  ctddm->add_option("--steps", tddm.steps, "Optimization steps");
  ctddm->add_option("--batch", tddm.batch, "Batch size");
  ctddm->add_option("--microbatch", tddm.microbatch, "Forward micro-batch");
  ctddm->add_option("--lr", tddm.lr, "Learning rate");
  ctddm->add_option("--c0", tddm.c0, "Channels at full resolution");
  ctddm->add_option("--c1", tddm.c1, "Channels at half resolution");
  ctddm->add_option("--c2", tddm.c2, "Channels at quarter resolution");
  ctddm->add_option("--temb", tddm.temb, "Noise-level embedding width");
  auto* tddm_seed = ctddm->add_option("--seed", tddm.seed, "Training seed");
  ctddm->add_flag("--resume", tddm.resume, "Continue from the saved checkpoint");

  SampleDdmArgs sddm;
  auto* csddm = app.add_subcommand("sample-ddm", "Sample patches from a denoiser");
  csddm->add_option("--ddm", sddm.ddm, "Denoiser checkpoint")->required();
  csddm->add_option("--out", sddm.out, "Output directory")->required();
  csddm->add_option("--count", sddm.count, "Number of samples");
  csddm->add_option("--seed", sddm.seed, "Sampling seed");

  FitNerfArgs fit;
  auto* cfit = app.add_subcommand("fit-nerf", "Fit a radiance field to a scene");
  cfit->add_option("--scene", fit.scene, "Scene directory")->required();
  cfit->add_option("--out", fit.out, "Output directory")->required();
  cfit->add_option("--preset", fit.preset, "llff, dtu or synthetic");
  cfit->add_option("--views", fit.views, "Training view count (0 = all)");
  cfit->add_option("--ddm", fit.ddm, "Denoiser checkpoint for the score term");
  cfit->add_option("--config", fit.config_file, "JSON config file");
  cfit->add_option("--steps", fit.steps, "Total optimization steps");
  cfit->add_option("--rays-per-batch", fit.rays, "Rays per training step");
  cfit->add_option("--samples-per-ray", fit.samples, "Samples along each ray");
  cfit->add_option("--patch-size", fit.patch, "Score patch side");
  cfit->add_option("--hidden", fit.hidden, "Field MLP width");
  cfit->add_option("--grid-levels", fit.levels, "Feature grid levels");
  cfit->add_option("--grid-base", fit.base_res, "Coarsest grid resolution");
  cfit->add_option("--lambda-fg", fit.lambda_fg, "Foreground loss weight");
  cfit->add_option("--lambda-fr", fit.lambda_fr, "Frustum loss weight");
  cfit->add_option("--lambda-dist-max", fit.lambda_dist_max,
                   "Distortion weight ceiling");
  cfit->add_option("--dist-ramp-start", fit.ramp_start, "Distortion ramp start");
  cfit->add_option("--dist-ramp-end", fit.ramp_end, "Distortion ramp end");
  cfit->add_option("--tau-start", fit.tau_start, "Initial noise level");
  cfit->add_option("--tau-warmup", fit.tau_warmup, "Noise warmup steps");
  cfit->add_option("--ddm-rgb-weight", fit.ddm_rgb, "Score weight on color");
  cfit->add_option("--ddm-depth-weight", fit.ddm_depth, "Score weight on depth");
  cfit->add_option("--lr", fit.lr, "Base learning rate");
  auto* fit_seed = cfit->add_option("--seed", fit.seed, "Training seed");

  RenderArgs render_args;
  auto* crender = app.add_subcommand("render", "Render views from a checkpoint");
  crender->add_option("--field", render_args.field, "Field checkpoint")->required();
  crender->add_option("--scene", render_args.scene, "Scene directory")->required();
  crender->add_option("--out", render_args.out, "Output directory")->required();
  crender->add_option("--subset", render_args.subset, "all, train or holdout");
  crender->add_option("--views", render_args.views, "Training view count");
  crender->add_option("--samples-per-ray", render_args.samples,
                      "Samples along each ray");

  ExtractMeshArgs mesh_args;
  auto* cmesh = app.add_subcommand("extract-mesh", "Extract a density isosurface");
  cmesh->add_option("--field", mesh_args.field, "Field checkpoint")->required();
  cmesh->add_option("--out", mesh_args.out, "Output directory")->required();
  cmesh->add_option("--resolution", mesh_args.resolution, "Lattice resolution");
  cmesh->add_option("--iso", mesh_args.iso, "Density isolevel");
  cmesh->add_flag("--cull", mesh_args.cull, "Frustum/occlusion culling");
  cmesh->add_flag("--use-masks", mesh_args.use_masks, "Also cull by object masks");
  cmesh->add_option("--scene", mesh_args.scene, "Scene directory (for culling)");
  cmesh->add_option("--views", mesh_args.views, "Training view count");
  cmesh->add_option("--tolerance", mesh_args.tolerance_voxels,
                    "Occlusion tolerance in voxels");

  EvaluateArgs eval_args;
  auto* ceval = app.add_subcommand("evaluate", "Score held-out views and geometry");
  ceval->add_option("--field", eval_args.field, "Field checkpoint")->required();
  ceval->add_option("--scene", eval_args.scene, "Scene directory")->required();
  ceval->add_option("--out", eval_args.out, "Output directory")->required();
  ceval->add_option("--views", eval_args.views, "Training view count");
  ceval->add_option("--samples-per-ray", eval_args.samples,
                    "Samples along each ray");
  ceval->add_option("--mesh", eval_args.mesh, "Predicted mesh PLY for chamfer");
  ceval->add_option("--lpips", eval_args.lpips, "Perceptual-score sidecar JSON");
  ceval->add_option("--chamfer-points", eval_args.chamfer_points,
                    "Surface samples per cloud");
  ceval->add_option("--seed", eval_args.seed, "Point-sampling seed");

  try {
    app.parse(argc, argv);
    tddm.seed_set = tddm_seed->count() > 0;
    fit.seed_set = fit_seed->count() > 0;
    if (cgen->parsed()) return cmd_gen_scene(gen);
    if (ccorp->parsed()) return cmd_build_corpus(corpus);
    if (ctddm->parsed()) return cmd_train_ddm(tddm);
    if (csddm->parsed()) return cmd_sample_ddm(sddm);
    if (cfit->parsed()) return cmd_fit_nerf(fit);
    if (crender->parsed()) return cmd_render(render_args);
    if (cmesh->parsed()) return cmd_extract_mesh(mesh_args);
    if (ceval->parsed()) return cmd_evaluate(eval_args);
    return 2;
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  } catch (const train::NumericFailure& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
