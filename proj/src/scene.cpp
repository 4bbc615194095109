#include "rgbdprior/scene.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <limits>

#include <json.hpp>

#include "rgbdprior/io.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace rgbdprior::data {

std::vector<int> subset_indices(int n_views, int k) {
  std::vector<int> out;
  if (k <= 0 || k >= n_views) {
    for (int i = 0; i < n_views; ++i) out.push_back(i);
    return out;
  }
  for (int i = 0; i < k; ++i) out.push_back(i * n_views / k);
  return out;
}

// --- textures ---------------------------------------------------------------------

namespace {

float lattice_value(uint64_t seed, int ix, int iy) {
  const uint64_t h = splitmix64(seed ^ (uint64_t(uint32_t(ix)) << 32) ^
                                uint64_t(uint32_t(iy)));
  return float(h >> 11) * float(0x1.0p-53);
}

}  // namespace

Vec3f Texture::sample(float u, float v) const {
  switch (kind) {
    case kConstant:
      return color_a;
    case kChecker: {
      const int iu = int(std::floor(u * scale)), iv = int(std::floor(v * scale));
      return ((iu + iv) & 1) ? color_b : color_a;
    }
    case kStripes: {
      const int iu = int(std::floor(u * scale));
      return (iu & 1) ? color_b : color_a;
    }
    case kNoise: {
      const float su = u * scale, sv = v * scale;
      const int iu = int(std::floor(su)), iv = int(std::floor(sv));
      const float fu = su - float(iu), fv = sv - float(iv);
      const float v00 = lattice_value(seed, iu, iv);
      const float v10 = lattice_value(seed, iu + 1, iv);
      const float v01 = lattice_value(seed, iu, iv + 1);
      const float v11 = lattice_value(seed, iu + 1, iv + 1);
      const float val = v00 * (1 - fu) * (1 - fv) + v10 * fu * (1 - fv) +
                        v01 * (1 - fu) * fv + v11 * fu * fv;
      return color_a + (color_b - color_a) * val;
    }
  }
  return color_a;
}

// --- intersections ------------------------------------------------------------------

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kTMin = 1e-9;

struct Hit {
  double t = kInf;
  Vec3f color = Vec3f::Ones();
  bool foreground = false;
};

void hit_sphere(const Primitive& p, const Vec3d& o, const Vec3d& d, Hit& best) {
  const double r = p.size.x();
  const Vec3d oc = o - p.center;
  const double b = oc.dot(d);
  const double c = oc.squaredNorm() - r * r;
  const double disc = b * b - c;
  if (disc < 0) return;
  const double s = std::sqrt(disc);
  double t = -b - s;
  if (t < kTMin) t = -b + s;
  if (t < kTMin || t >= best.t) return;
  const Vec3d n = (o + t * d - p.center) / r;
  const float u = float(std::atan2(n.z(), n.x()) / (2.0 * M_PI) + 0.5);
  const float v = float(std::acos(std::clamp(n.y(), -1.0, 1.0)) / M_PI);
  best = {t, p.texture.sample(u, v), p.foreground};
}

void hit_box(const Primitive& p, const Vec3d& o, const Vec3d& d, Hit& best) {
  const Vec3d lo = p.center - p.size, hi = p.center + p.size;
  double t0 = kTMin, t1 = best.t;
  int axis = -1;
  for (int a = 0; a < 3; ++a) {
    const double inv = 1.0 / d[a];
    double ta = (lo[a] - o[a]) * inv, tb = (hi[a] - o[a]) * inv;
    if (ta > tb) std::swap(ta, tb);
    if (ta > t0) {
      t0 = ta;
      axis = a;
    }
    t1 = std::min(t1, tb);
    if (t0 > t1) return;
  }
  if (axis < 0) return;  // origin inside the box
  const Vec3d q = o + t0 * d;
  const int ua = (axis + 1) % 3, va = (axis + 2) % 3;
  const float u = float((q[ua] - lo[ua]) / (hi[ua] - lo[ua]));
  const float v = float((q[va] - lo[va]) / (hi[va] - lo[va]));
  best = {t0, p.texture.sample(u, v), p.foreground};
}

void hit_rect(const Primitive& p, const Vec3d& o, const Vec3d& d, Hit& best) {
  const Vec3d n = p.normal.normalized();
  const double denom = d.dot(n);
  if (std::abs(denom) < 1e-12) return;
  const double t = (p.center - o).dot(n) / denom;
  if (t < kTMin || t >= best.t) return;
  const Vec3d u_axis = (p.tangent - p.tangent.dot(n) * n).normalized();
  const Vec3d v_axis = n.cross(u_axis);
  const Vec3d rel = o + t * d - p.center;
  const double a = rel.dot(u_axis), b = rel.dot(v_axis);
  if (std::abs(a) > p.size.x() || std::abs(b) > p.size.y()) return;
  const float u = float(a / p.size.x() * 0.5 + 0.5);
  const float v = float(b / p.size.y() * 0.5 + 0.5);
  best = {t, p.texture.sample(u, v), p.foreground};
}

}  // namespace

double trace_primitives(const std::vector<Primitive>& prims, const Vec3d& o,
                        const Vec3d& d, Vec3f* color, bool* foreground) {
  Hit best;
  for (const auto& p : prims) {
    switch (p.kind) {
      case Primitive::kSphere: hit_sphere(p, o, d, best); break;
      case Primitive::kBox: hit_box(p, o, d, best); break;
      case Primitive::kRect: hit_rect(p, o, d, best); break;
    }
  }
  if (color) *color = best.color;
  if (foreground) *foreground = best.foreground;
  return best.t;
}

double distance_to_primitives(const std::vector<Primitive>& prims,
                              const Vec3d& p) {
  double best = kInf;
  for (const auto& prim : prims) {
    double d = kInf;
    switch (prim.kind) {
      case Primitive::kSphere:
        d = std::abs((p - prim.center).norm() - prim.size.x());
        break;
      case Primitive::kBox: {
        const Vec3d q = (p - prim.center).cwiseAbs() - prim.size;
        const double outside = q.cwiseMax(0.0).norm();
        const double inside = std::min(q.maxCoeff(), 0.0);
        d = std::abs(outside + inside);
        break;
      }
      case Primitive::kRect: {
        const Vec3d n = prim.normal.normalized();
        const Vec3d u_axis = (prim.tangent - prim.tangent.dot(n) * n).normalized();
        const Vec3d v_axis = n.cross(u_axis);
        const Vec3d rel = p - prim.center;
        const double a = std::clamp(rel.dot(u_axis), -prim.size.x(), prim.size.x());
        const double b = std::clamp(rel.dot(v_axis), -prim.size.y(), prim.size.y());
        d = (rel - a * u_axis - b * v_axis).norm();
        break;
      }
    }
    best = std::min(best, d);
  }
  return best;
}

// --- mesh tessellation ---------------------------------------------------------------

namespace {

void append_sphere(TriMesh& mesh, const Primitive& p, int segs) {
  const int rings = segs, slices = 2 * segs;
  const int base = int(mesh.verts.size());
  for (int i = 0; i <= rings; ++i) {
    const double phi = M_PI * double(i) / rings;
    for (int j = 0; j <= slices; ++j) {
      const double th = 2.0 * M_PI * double(j) / slices;
      const Vec3d n(std::sin(phi) * std::cos(th), std::cos(phi),
                    std::sin(phi) * std::sin(th));
      mesh.verts.push_back((p.center + p.size.x() * n).cast<float>());
    }
  }
  const int stride = slices + 1;
  for (int i = 0; i < rings; ++i)
    for (int j = 0; j < slices; ++j) {
      const int a = base + i * stride + j, b = a + 1;
      const int c = a + stride, d = c + 1;
      if (i > 0) mesh.faces.push_back({a, b, c});
      if (i + 1 < rings) mesh.faces.push_back({b, d, c});
    }
}

void append_quad(TriMesh& mesh, const Vec3d& c, const Vec3d& du, const Vec3d& dv,
                 int subdiv) {
  const int base = int(mesh.verts.size());
  for (int i = 0; i <= subdiv; ++i)
    for (int j = 0; j <= subdiv; ++j) {
      const double fu = 2.0 * i / subdiv - 1.0, fv = 2.0 * j / subdiv - 1.0;
      mesh.verts.push_back((c + fu * du + fv * dv).cast<float>());
    }
  const int stride = subdiv + 1;
  for (int i = 0; i < subdiv; ++i)
    for (int j = 0; j < subdiv; ++j) {
      const int a = base + i * stride + j, b = a + stride;
      mesh.faces.push_back({a, b, a + 1});
      mesh.faces.push_back({a + 1, b, b + 1});
    }
}

void append_box(TriMesh& mesh, const Primitive& p) {
  const Vec3d& h = p.size;
  const Vec3d ex = Vec3d::UnitX() * h.x(), ey = Vec3d::UnitY() * h.y(),
              ez = Vec3d::UnitZ() * h.z();
  append_quad(mesh, p.center + ex, ey, ez, 2);
  append_quad(mesh, p.center - ex, ey, ez, 2);
  append_quad(mesh, p.center + ey, ex, ez, 2);
  append_quad(mesh, p.center - ey, ex, ez, 2);
  append_quad(mesh, p.center + ez, ex, ey, 2);
  append_quad(mesh, p.center - ez, ex, ey, 2);
}

void append_rect(TriMesh& mesh, const Primitive& p) {
  const Vec3d n = p.normal.normalized();
  const Vec3d u_axis = (p.tangent - p.tangent.dot(n) * n).normalized();
  const Vec3d v_axis = n.cross(u_axis);
  append_quad(mesh, p.center, u_axis * p.size.x(), v_axis * p.size.y(), 8);
}

}  // namespace

CameraPosed look_at_camera(const Vec3d& pos, const Vec3d& target, int w, int h,
                           double fov_deg, double near, double far) {
  const Vec3d f = (target - pos).normalized();
  Vec3d up = Vec3d::UnitY();
  if (std::abs(f.dot(up)) > 0.999) up = Vec3d::UnitX();
  const Vec3d x = f.cross(up).normalized();
  const Vec3d y = (-f).cross(x).normalized();
  CameraPosed cam;
  cam.width = w;
  cam.height = h;
  cam.fx = cam.fy = 0.5 * w / std::tan(0.5 * fov_deg * M_PI / 180.0);
  cam.cx = 0.5 * w;
  cam.cy = 0.5 * h;
  cam.near = near;
  cam.far = far;
  cam.c2w = Mat4d::Identity();
  cam.c2w.block<3, 1>(0, 0) = x;
  cam.c2w.block<3, 1>(0, 1) = y;
  cam.c2w.block<3, 1>(0, 2) = -f;
  cam.c2w.block<3, 1>(0, 3) = pos;
  return cam;
}

SceneDataset generate_synthetic_scene(const SceneSpec& spec) {
  check(!spec.prims.empty(), "synthetic scene needs at least one primitive");
  check(spec.near > 0 && spec.near < spec.far, "scene needs 0 < near < far");

  SceneDataset out;
  out.near = spec.near;
  out.far = spec.far;
  out.scene_scale = spec.scene_scale;

  if (!spec.explicit_cameras.empty()) {
    out.cameras = spec.explicit_cameras;
  } else {
    for (int k = 0; k < spec.n_views; ++k) {
      const double th = 2.0 * M_PI * double(k) / spec.n_views;
      const Vec3d pos = spec.look_at + Vec3d(spec.ring_radius * std::cos(th),
                                             spec.ring_height,
                                             spec.ring_radius * std::sin(th));
      out.cameras.push_back(look_at_camera(pos, spec.look_at, spec.width,
                                           spec.height, spec.fov_deg, spec.near,
                                           spec.far));
    }
  }

  for (const auto& cam : out.cameras) {
    Tensor3f img(3, cam.height, cam.width);
    Eigen::ArrayXXf depth(cam.height, cam.width);
    Eigen::ArrayXXf mask(cam.height, cam.width);
    for (int y = 0; y < cam.height; ++y)
      for (int x = 0; x < cam.width; ++x) {
        const Rayd ray = cam.pixel_center_ray(x, y);
        Vec3f color;
        bool fg = false;
        const double t =
            trace_primitives(spec.prims, ray.origin, ray.dir, &color, &fg);
        if (std::isfinite(t)) {
          depth(y, x) = float(t);
          mask(y, x) = fg ? 1.0f : 0.0f;
        } else {
          color = Vec3f::Ones();  // white background
          depth(y, x) = std::numeric_limits<float>::infinity();
          mask(y, x) = 0.0f;
        }
        for (int c = 0; c < 3; ++c) img.at(c, y, x) = color[c];
      }
    out.images.push_back(std::move(img));
    out.gt_depth.push_back(std::move(depth));
    out.object_masks.push_back(std::move(mask));
  }

  for (const auto& p : spec.prims) {
    if (!p.foreground) continue;  // backdrop stays out of the GT mesh
    switch (p.kind) {
      case Primitive::kSphere:
        append_sphere(out.gt_mesh, p, spec.mesh_sphere_segments);
        break;
      case Primitive::kBox: append_box(out.gt_mesh, p); break;
      case Primitive::kRect: append_rect(out.gt_mesh, p); break;
    }
  }
  out.has_gt_mesh = !out.gt_mesh.faces.empty();
  out.train_indices = subset_indices(out.n_views(), 0);
  return out;
}

SceneSpec make_demo_scene(uint64_t seed, int n_views, int image_size) {
  Rng rng(seed);
  SceneSpec spec;
  spec.width = spec.height = image_size;
  spec.n_views = n_views;

  auto random_color = [&rng] {
    return Vec3f(float(0.15 + 0.8 * rng.uniform()),
                 float(0.15 + 0.8 * rng.uniform()),
                 float(0.15 + 0.8 * rng.uniform()));
  };
  auto random_texture = [&](Texture::Kind kind) {
    Texture t;
    t.kind = kind;
    t.color_a = random_color();
    t.color_b = random_color();
    t.scale = float(3 + rng.uniform_int(6));
    t.seed = rng.next_u64();
    return t;
  };

  // Backdrop: a large textured floor catching every training ray.
  Primitive floor;
  floor.kind = Primitive::kRect;
  floor.center = Vec3d(0, -0.55, 0);
  floor.normal = Vec3d::UnitY();
  floor.tangent = Vec3d::UnitX();
  floor.size = Vec3d(6.0, 6.0, 0.0);
  floor.texture = random_texture(Texture::kChecker);
  floor.foreground = false;
  spec.prims.push_back(floor);

  Primitive ball;
  ball.kind = Primitive::kSphere;
  ball.center = Vec3d(-0.35 + 0.2 * rng.uniform(), 0.0, -0.15);
  ball.size = Vec3d::Constant(0.45);
  ball.texture = random_texture(Texture::kNoise);
  spec.prims.push_back(ball);

  Primitive crate;
  crate.kind = Primitive::kBox;
  crate.center = Vec3d(0.55, -0.2 + 0.1 * rng.uniform(), 0.3);
  crate.size = Vec3d(0.3, 0.35, 0.3);
  crate.texture = random_texture(Texture::kChecker);
  spec.prims.push_back(crate);

  Primitive card;
  card.kind = Primitive::kRect;
  card.center = Vec3d(0.0, 0.25, 0.75);
  card.normal = Vec3d(0.2, 0.1, -1.0).normalized();
  card.tangent = Vec3d::UnitX();
  card.size = Vec3d(0.5, 0.35, 0.0);
  card.texture = random_texture(Texture::kStripes);
  spec.prims.push_back(card);
  return spec;
}

// --- persistence ---------------------------------------------------------------------

void save_scene(const std::string& dir, const SceneDataset& scene) {
  check(!scene.images.empty(), "cannot save an empty scene");
  fs::create_directories(fs::path(dir) / "images");

  const auto& c0 = scene.cameras[0];
  json frames = json::array();
  for (int i = 0; i < scene.n_views(); ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "view_%03d.png", i);
    write_png((fs::path(dir) / "images" / name).string(), scene.images[size_t(i)]);
    json c2w = json::array();
    for (int r = 0; r < 4; ++r)
      for (int col = 0; col < 4; ++col)
        c2w.push_back(scene.cameras[size_t(i)].c2w(r, col));
    frames.push_back({{"file", std::string("images/") + name}, {"c2w", c2w}});
  }
  const json root = {{"w", c0.width},   {"h", c0.height}, {"fx", c0.fx},
                     {"fy", c0.fy},     {"cx", c0.cx},    {"cy", c0.cy},
                     {"near", scene.near}, {"far", scene.far},
                     {"scale", scene.scene_scale}, {"frames", frames}};
  write_file((fs::path(dir) / "cameras.json").string(), root.dump(2) + "\n");

  if (!scene.gt_depth.empty() || scene.has_gt_mesh || !scene.object_masks.empty())
    fs::create_directories(fs::path(dir) / "gt");
  for (size_t i = 0; i < scene.gt_depth.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "depth_%03zu.bin", i);
    write_float_map((fs::path(dir) / "gt" / name).string(), scene.gt_depth[i]);
  }
  for (size_t i = 0; i < scene.object_masks.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "mask_%03zu.png", i);
    Tensor3f m(1, int(scene.object_masks[i].rows()),
               int(scene.object_masks[i].cols()));
    for (int y = 0; y < m.h; ++y)
      for (int x = 0; x < m.w; ++x) m.at(0, y, x) = scene.object_masks[i](y, x);
    write_png((fs::path(dir) / "gt" / name).string(), m);
  }
  if (scene.has_gt_mesh)
    save_ply((fs::path(dir) / "gt" / "mesh.ply").string(), scene.gt_mesh);
}

SceneDataset load_scene(const std::string& dir, int views) {
  const fs::path root(dir);
  check(fs::exists(root / "cameras.json"),
        "scene directory has no cameras.json: " + dir);
  json j;
  try {
    j = json::parse(read_file((root / "cameras.json").string()));
  } catch (const std::exception& e) {
    throw std::runtime_error("malformed cameras.json: " + std::string(e.what()));
  }

  SceneDataset scene;
  const int w = j.at("w"), h = j.at("h");
  const double fx = j.at("fx"), fy = j.at("fy");
  const double cx = j.at("cx"), cy = j.at("cy");
  scene.near = j.at("near");
  scene.far = j.at("far");
  scene.scene_scale = j.at("scale");
  check(w > 0 && h > 0, "cameras.json: bad image extent");
  check(fx != 0 && fy != 0, "cameras.json: degenerate focal length");
  check(scene.near > 0 && scene.near < scene.far,
        "cameras.json: need 0 < near < far");
  check(j.at("frames").is_array() && !j.at("frames").empty(),
        "cameras.json: no frames");

  for (const auto& f : j.at("frames")) {
    CameraPosed cam;
    cam.width = w; cam.height = h;
    cam.fx = fx; cam.fy = fy; cam.cx = cx; cam.cy = cy;
    cam.near = scene.near;
    cam.far = scene.far;
    const auto& m = f.at("c2w");
    check(m.is_array() && m.size() == 16, "cameras.json: c2w needs 16 entries");
    for (int r = 0; r < 4; ++r)
      for (int col = 0; col < 4; ++col) cam.c2w(r, col) = m[size_t(4 * r + col)];
    const Mat3<double> R = cam.rotation();
    check((R.transpose() * R - Mat3<double>::Identity()).cwiseAbs().maxCoeff() <=
              1e-4,
          "cameras.json: rotation block is not orthonormal");
    check(R.determinant() > 0, "cameras.json: rotation has negative determinant");
    scene.cameras.push_back(cam);

    const std::string file = f.at("file");
    Tensor3f img = read_png((root / file).string());
    check(img.w == w && img.h == h, "image extent disagrees with cameras.json");
    scene.images.push_back(std::move(img));
  }

  for (size_t i = 0; i < scene.images.size(); ++i) {
    char dname[32], mname[32];
    std::snprintf(dname, sizeof(dname), "depth_%03zu.bin", i);
    std::snprintf(mname, sizeof(mname), "mask_%03zu.png", i);
    if (fs::exists(root / "gt" / dname))
      scene.gt_depth.push_back(read_float_map((root / "gt" / dname).string()));
    if (fs::exists(root / "gt" / mname)) {
      const Tensor3f m = read_png((root / "gt" / mname).string());
      Eigen::ArrayXXf mask(m.h, m.w);
      for (int y = 0; y < m.h; ++y)
        for (int x = 0; x < m.w; ++x) mask(y, x) = m.at(0, y, x) > 0.5f ? 1.f : 0.f;
      scene.object_masks.push_back(std::move(mask));
    }
  }
  if (fs::exists(root / "gt" / "mesh.ply")) {
    scene.gt_mesh = load_ply((root / "gt" / "mesh.ply").string());
    scene.has_gt_mesh = true;
  }

  scene.train_indices = subset_indices(scene.n_views(), views);
  return scene;
}

// --- patch corpus ----------------------------------------------------------------------

PatchCorpus build_patch_corpus(const std::vector<SceneDataset>& scenes,
                               int patches_per_image, int patch_side,
                               uint64_t seed) {
  check(!scenes.empty() && patches_per_image > 0 && patch_side > 0,
        "build_patch_corpus: bad arguments");
  PatchCorpus corpus;
  corpus.patch_side = patch_side;
  corpus.scene_scale = float(scenes[0].scene_scale);

  const Eigen::Index per = Eigen::Index(patch_side) * patch_side;
  Rng root(seed);
  for (size_t si = 0; si < scenes.size(); ++si) {
    const SceneDataset& scene = scenes[si];
    check(scene.gt_depth.size() == scene.images.size(),
          "build_patch_corpus: scene lacks ground-truth depth");
    const float s = float(scene.scene_scale);
    for (int vi = 0; vi < scene.n_views(); ++vi) {
      const Tensor3f& img = scene.images[size_t(vi)];
      const Eigen::ArrayXXf& depth = scene.gt_depth[size_t(vi)];
      check(img.w >= patch_side && img.h >= patch_side,
            "build_patch_corpus: image smaller than patch");
      Rng rng = root.fork(si, uint64_t(vi));
      for (int k = 0; k < patches_per_image; ++k) {
        const int x0 = int(rng.uniform_int(uint64_t(img.w - patch_side + 1)));
        const int y0 = int(rng.uniform_int(uint64_t(img.h - patch_side + 1)));
        ArrX<float> rec(4 * per);
        bool ok = true;
        for (int py = 0; py < patch_side && ok; ++py)
          for (int px = 0; px < patch_side; ++px) {
            const float d = depth(y0 + py, x0 + px);
            if (!std::isfinite(d)) {
              ok = false;
              break;
            }
            const Eigen::Index off = Eigen::Index(py) * patch_side + px;
            for (int c = 0; c < 3; ++c)
              rec[c * per + off] = 2.0f * img.at(c, y0 + py, x0 + px) - 1.0f;
            rec[3 * per + off] = ddm::encode_depth(d, s);
          }
        if (ok) corpus.records.push_back(std::move(rec));
      }
    }
  }
  check(corpus.count() > 0, "build_patch_corpus: no valid patches");
  return corpus;
}

namespace {
constexpr char kCorpusMagic[8] = {'R', 'G', 'B', 'D', 'C', 'O', 'R', '1'};
constexpr size_t kCorpusHeaderSize = 64;
}  // namespace

void save_patch_corpus(const std::string& path, const PatchCorpus& corpus) {
  check(corpus.count() > 0, "refusing to write an empty corpus");
  std::string bytes(kCorpusHeaderSize, '\0');
  std::memcpy(bytes.data(), kCorpusMagic, 8);
  const uint32_t version = 1, count = uint32_t(corpus.count()),
                 side = uint32_t(corpus.patch_side), channels = 4;
  std::memcpy(bytes.data() + 8, &version, 4);
  std::memcpy(bytes.data() + 12, &count, 4);
  std::memcpy(bytes.data() + 16, &side, 4);
  std::memcpy(bytes.data() + 20, &channels, 4);
  std::memcpy(bytes.data() + 24, &corpus.scene_scale, 4);
  for (const auto& rec : corpus.records)
    bytes.append(reinterpret_cast<const char*>(rec.data()),
                 sizeof(float) * size_t(rec.size()));
  write_file(path, bytes);
}

PatchCorpus load_patch_corpus(const std::string& path) {
  const std::string bytes = read_file(path);
  check(bytes.size() >= kCorpusHeaderSize &&
            std::memcmp(bytes.data(), kCorpusMagic, 8) == 0,
        "corrupt patch corpus header: " + path);
  uint32_t version = 0, count = 0, side = 0, channels = 0;
  std::memcpy(&version, bytes.data() + 8, 4);
  std::memcpy(&count, bytes.data() + 12, 4);
  std::memcpy(&side, bytes.data() + 16, 4);
  std::memcpy(&channels, bytes.data() + 20, 4);
  PatchCorpus corpus;
  std::memcpy(&corpus.scene_scale, bytes.data() + 24, 4);
  check(version == 1, "unsupported corpus version");
  check(channels == 4 && side > 0 && count > 0,
        "corrupt patch corpus header: " + path);
  corpus.patch_side = int(side);
  const size_t rec_bytes = sizeof(float) * 4 * size_t(side) * side;
  check(bytes.size() == kCorpusHeaderSize + rec_bytes * count,
        "truncated patch corpus: " + path);
  for (uint32_t i = 0; i < count; ++i) {
    ArrX<float> rec(4 * Eigen::Index(side) * side);
    std::memcpy(rec.data(), bytes.data() + kCorpusHeaderSize + i * rec_bytes,
                rec_bytes);
    corpus.records.push_back(std::move(rec));
  }
  return corpus;
}

}  // namespace rgbdprior::data
