#pragma once

#include <utility>
#include <vector>

#include "rgbdprior/camera.hpp"
#include "rgbdprior/common.hpp"
#include "rgbdprior/field.hpp"
#include "rgbdprior/trimesh.hpp"

namespace rgbdprior::eval {

// Dense scalar samples on a regular lattice. Linear index layout is
// (iz * ny + iy) * nx + ix; world position of sample (ix,iy,iz) is
// origin + (ix,iy,iz) .* spacing.
struct ScalarGrid {
  int nx = 0, ny = 0, nz = 0;
  Vec3d origin = Vec3d::Zero();
  Vec3d spacing = Vec3d::Ones();
  std::vector<float> values;

  float at(int ix, int iy, int iz) const {
    return values[size_t((iz * ny + iy) * nx + ix)];
  }
};

// Classic 15-case marching-cubes isosurface; shared lattice-edge vertices are
// welded. A level set that crosses no cell yields an empty mesh.
TriMesh marching_cubes(const ScalarGrid& grid, float iso);

// Exact nearest-neighbor lookup via a balanced k-d tree.
class KdTree {
 public:
  explicit KdTree(std::vector<Vec3f> points);
  // Returns (index into the constructor cloud, squared distance).
  std::pair<int, float> nearest(const Vec3f& q) const;
  int size() const { return int(items_.size()); }

 private:
  struct Item {
    Vec3f p;
    int orig;
  };
  void build(int lo, int hi);
  void search(int lo, int hi, const Vec3f& q, float& best_d2, int& best) const;
  std::vector<Item> items_;
  std::vector<int8_t> axis_;
};

// Symmetric mean nearest-neighbor (Euclidean) distance between point clouds.
double chamfer_l1(const std::vector<Vec3f>& a, const std::vector<Vec3f>& b);

// Area-uniform surface samples, reproducible from the generator state.
std::vector<Vec3f> sample_mesh_points(const TriMesh& mesh, int count, Rng& rng);

// Median-split bounding-volume hierarchy for ray/mesh distance queries.
class TriangleBvh {
 public:
  explicit TriangleBvh(const TriMesh& mesh);
  // Distance along the (unit) direction to the first intersection, or +inf.
  double first_hit(const Vec3d& origin, const Vec3d& dir) const;

 private:
  struct Node {
    Vec3f lo, hi;
    int left = -1, right = -1;  // children, or -1 for a leaf
    int start = 0, count = 0;   // triangle range for leaves
  };
  int build(std::vector<int>& order, int lo, int hi);
  std::vector<Node> nodes_;
  std::vector<std::array<Vec3d, 3>> tris_;  // leaf order
};

// Keeps faces whose centroid lies in at least one camera frustum and is not
// occluded by the mesh itself on the segment to that camera (tolerance in
// world units). With per-view object masks, faces seen as background in every
// view are dropped as well. Unreferenced vertices are compacted away.
TriMesh cull_mesh(const TriMesh& mesh, const std::vector<CameraPosed>& cameras,
                  const std::vector<Eigen::ArrayXXf>& masks, double tolerance);

// Density isosurface over the field bounds, sampled on a resolution^3 lattice.
template <typename S>
TriMesh extract_mesh(const fields::RadianceField<S>& field, int resolution,
                     double iso_sigma) {
  check(resolution >= 16, "mesh extraction needs resolution >= 16");
  ScalarGrid grid;
  grid.nx = grid.ny = grid.nz = resolution;
  grid.origin = field.bounds().lo.template cast<double>();
  grid.spacing = field.bounds().extent().template cast<double>() /
                 double(resolution - 1);
  grid.values.resize(size_t(resolution) * resolution * resolution);

  const int chunk = 65536;
  const size_t total = grid.values.size();
  MatX<S> pts(3, chunk);
  for (size_t start = 0; start < total; start += chunk) {
    const int n = int(std::min(total - start, size_t(chunk)));
    for (int i = 0; i < n; ++i) {
      const size_t idx = start + size_t(i);
      const int ix = int(idx % size_t(resolution));
      const int iy = int((idx / size_t(resolution)) % size_t(resolution));
      const int iz = int(idx / (size_t(resolution) * resolution));
      pts.col(i) = Vec3<S>(S(grid.origin.x() + ix * grid.spacing.x()),
                           S(grid.origin.y() + iy * grid.spacing.y()),
                           S(grid.origin.z() + iz * grid.spacing.z()));
    }
    const ArrX<S> sigma = field.density_forward(pts.leftCols(n));
    for (int i = 0; i < n; ++i) grid.values[start + size_t(i)] = float(sigma[i]);
  }
  return marching_cubes(grid, float(iso_sigma));
}

}  // namespace rgbdprior::eval
