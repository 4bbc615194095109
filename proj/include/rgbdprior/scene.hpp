#pragma once

#include <optional>
#include <string>
#include <vector>

#include "rgbdprior/camera.hpp"
#include "rgbdprior/common.hpp"
#include "rgbdprior/patch.hpp"
#include "rgbdprior/tensor.hpp"
#include "rgbdprior/trimesh.hpp"

namespace rgbdprior::data {

// Posed multi-view dataset, optionally with exact ground truth from the
// synthetic generator. Cameras are kept in double precision so save/load
// round-trips stay tight.
struct SceneDataset {
  std::vector<Tensor3f> images;  // 3 x H x W, values in [0,1]
  std::vector<CameraPosed> cameras;
  double near = 0.1, far = 10.0;
  double scene_scale = 1.0;

  std::vector<int> train_indices;  // view subset used for fitting

  // Optional ground truth.
  std::vector<Eigen::ArrayXXf> gt_depth;      // along-ray distance, inf = miss
  std::vector<Eigen::ArrayXXf> object_masks;  // 1 = foreground object
  TriMesh gt_mesh;
  bool has_gt_mesh = false;

  int n_views() const { return int(images.size()); }
  std::vector<int> holdout_indices() const {
    std::vector<int> out;
    for (int i = 0; i < n_views(); ++i)
      if (std::find(train_indices.begin(), train_indices.end(), i) ==
          train_indices.end())
        out.push_back(i);
    return out;
  }
};

// Evenly spaced view subset: k indices over n views, first is always 0.
std::vector<int> subset_indices(int n_views, int k);

// --- synthetic scene generation --------------------------------------------------

struct Texture {
  enum Kind { kConstant, kChecker, kStripes, kNoise } kind = kConstant;
  Vec3f color_a = Vec3f(0.8f, 0.8f, 0.8f);
  Vec3f color_b = Vec3f(0.2f, 0.2f, 0.2f);
  float scale = 4.0f;  // cells across the primitive's parameter square
  uint64_t seed = 0;   // lattice seed for kNoise

  Vec3f sample(float u, float v) const;
};

struct Primitive {
  enum Kind { kSphere, kBox, kRect } kind = kSphere;
  Vec3d center = Vec3d::Zero();
  // kSphere: radius = size.x(). kBox: half extents. kRect: in-plane half
  // extents size.x()/size.y() along tangent/bitangent.
  Vec3d size = Vec3d::Ones();
  Vec3d normal = Vec3d::UnitZ();   // kRect orientation
  Vec3d tangent = Vec3d::UnitX();  // kRect in-plane axis
  Texture texture;
  bool foreground = true;  // false for backdrop geometry (mask = 0)
};

struct SceneSpec {
  int width = 128, height = 128;
  int n_views = 12;
  double fov_deg = 55.0;
  double ring_radius = 3.0, ring_height = 1.0;
  Vec3d look_at = Vec3d::Zero();
  double near = 0.5, far = 8.0;
  double scene_scale = 2.0;
  std::vector<Primitive> prims;
  // When nonempty these poses replace the camera ring.
  std::vector<CameraPosed> explicit_cameras;
  int mesh_sphere_segments = 48;
};

// Deterministic unlit ray-traced render of the primitives: exact RGB, exact
// along-ray depth (inf where only background is hit), object masks, and a
// triangulated ground-truth mesh.
SceneDataset generate_synthetic_scene(const SceneSpec& spec);

// Ready-made demo scene: textured backdrop + a few random-textured objects.
SceneSpec make_demo_scene(uint64_t seed, int n_views = 12, int image_size = 128);

// Analytic nearest-hit used by the generator (exposed for oracle tests);
// returns along-ray distance or infinity, and fills color/foreground.
double trace_primitives(const std::vector<Primitive>& prims, const Vec3d& origin,
                        const Vec3d& dir, Vec3f* color, bool* foreground);

// Camera at pos looking toward target (y-ish up), symmetric pinhole
// intrinsics from a vertical-equals-horizontal field of view.
CameraPosed look_at_camera(const Vec3d& pos, const Vec3d& target, int w, int h,
                           double fov_deg, double near = 0.1, double far = 10.0);

// Shortest distance from a point to any primitive surface (for painting
// near-delta densities in consistency tests).
double distance_to_primitives(const std::vector<Primitive>& prims,
                              const Vec3d& p);

// --- dataset persistence ----------------------------------------------------------

// Writes images/, cameras.json, and (when present) gt/ into dir.
void save_scene(const std::string& dir, const SceneDataset& scene);

// Loads a dataset; `views` > 0 selects that many evenly spaced training
// views (0 keeps every view in the training set).
SceneDataset load_scene(const std::string& dir, int views = 0);

// --- patch corpus ------------------------------------------------------------------

struct PatchCorpus {
  int patch_side = 0;
  float scene_scale = 1.0f;
  // One patch per column block: values laid out channel-planar
  // (4 * P * P floats per record, matching RGBDPatch storage).
  std::vector<ArrX<float>> records;

  int count() const { return int(records.size()); }
};

// Samples random windows from the scenes' images + GT depth, drops windows
// containing non-finite depth, and encodes records per the RGBD patch
// convention.
PatchCorpus build_patch_corpus(const std::vector<SceneDataset>& scenes,
                               int patches_per_image, int patch_side,
                               uint64_t seed);

void save_patch_corpus(const std::string& path, const PatchCorpus& corpus);
PatchCorpus load_patch_corpus(const std::string& path);

}  // namespace rgbdprior::data
