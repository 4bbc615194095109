#include "rgbdprior/mesh.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>
#include <unordered_map>

#include "rgbdprior/io.hpp"
#include "rgbdprior/mc_tables.hpp"

namespace rgbdprior {

// --- ASCII PLY --------------------------------------------------------------------

void save_ply(const std::string& path, const TriMesh& mesh) {
  std::string out;
  out += "ply\nformat ascii 1.0\n";
  out += "element vertex " + std::to_string(mesh.verts.size()) + "\n";
  out += "property float x\nproperty float y\nproperty float z\n";
  out += "element face " + std::to_string(mesh.faces.size()) + "\n";
  out += "property list uchar int vertex_indices\nend_header\n";
  char line[128];
  for (const auto& v : mesh.verts) {
    std::snprintf(line, sizeof(line), "%.9g %.9g %.9g\n", v.x(), v.y(), v.z());
    out += line;
  }
  for (const auto& f : mesh.faces) {
    std::snprintf(line, sizeof(line), "3 %d %d %d\n", f[0], f[1], f[2]);
    out += line;
  }
  write_file(path, out);
}

void save_ply_points(const std::string& path, const std::vector<Vec3f>& pts) {
  TriMesh cloud;
  cloud.verts = pts;
  save_ply(path, cloud);
}

TriMesh load_ply(const std::string& path) {
  std::istringstream in(read_file(path));
  std::string line;
  std::getline(in, line);
  check(line.rfind("ply", 0) == 0, "not a PLY file: " + path);

  size_t n_verts = 0, n_faces = 0;
  int xi = -1, yi = -1, zi = -1, vert_props = 0;
  bool ascii = false, in_vertex = false;
  while (std::getline(in, line)) {
    std::istringstream ls(line);
    std::string tok;
    ls >> tok;
    if (tok == "format") {
      ls >> tok;
      ascii = (tok == "ascii");
    } else if (tok == "element") {
      std::string what;
      size_t n;
      ls >> what >> n;
      in_vertex = (what == "vertex");
      if (what == "vertex") n_verts = n;
      if (what == "face") n_faces = n;
    } else if (tok == "property" && in_vertex) {
      std::string type, name;
      ls >> type >> name;
      if (name == "x") xi = vert_props;
      if (name == "y") yi = vert_props;
      if (name == "z") zi = vert_props;
      ++vert_props;
    } else if (tok == "end_header") {
      break;
    }
  }
  check(ascii, "only ASCII PLY is supported: " + path);
  check(xi >= 0 && yi >= 0 && zi >= 0, "PLY lacks x/y/z properties: " + path);

  TriMesh mesh;
  mesh.verts.reserve(n_verts);
  std::vector<double> vals(size_t(vert_props), 0.0);
  for (size_t i = 0; i < n_verts; ++i) {
    check(bool(std::getline(in, line)), "truncated PLY vertices: " + path);
    std::istringstream ls(line);
    for (auto& v : vals)
      check(bool(ls >> v), "malformed PLY vertex line: " + path);
    mesh.verts.push_back(Vec3f(float(vals[size_t(xi)]), float(vals[size_t(yi)]),
                               float(vals[size_t(zi)])));
  }
  mesh.faces.reserve(n_faces);
  for (size_t i = 0; i < n_faces; ++i) {
    check(bool(std::getline(in, line)), "truncated PLY faces: " + path);
    std::istringstream ls(line);
    int k = 0;
    check(bool(ls >> k) && k >= 3, "malformed PLY face line: " + path);
    std::vector<int> idx(size_t(k), 0);
    for (auto& v : idx) {
      check(bool(ls >> v) && v >= 0 && size_t(v) < mesh.verts.size(),
            "PLY face index out of range: " + path);
    }
    for (int t = 2; t < k; ++t)  // fan triangulation of polygons
      mesh.faces.push_back({idx[0], idx[size_t(t) - 1], idx[size_t(t)]});
  }
  return mesh;
}

}  // namespace rgbdprior

namespace rgbdprior::eval {

// --- marching cubes --------------------------------------------------------------

namespace {

constexpr int kCorner[8][3] = {{0, 0, 0}, {1, 0, 0}, {1, 1, 0}, {0, 1, 0},
                               {0, 0, 1}, {1, 0, 1}, {1, 1, 1}, {0, 1, 1}};
constexpr int kEdgeEnds[12][2] = {{0, 1}, {1, 2}, {2, 3}, {3, 0},
                                  {4, 5}, {5, 6}, {6, 7}, {7, 4},
                                  {0, 4}, {1, 5}, {2, 6}, {3, 7}};

}  // namespace

TriMesh marching_cubes(const ScalarGrid& grid, float iso) {
  check(grid.nx >= 2 && grid.ny >= 2 && grid.nz >= 2,
        "marching cubes needs at least a 2x2x2 lattice");
  check(grid.values.size() ==
            size_t(grid.nx) * size_t(grid.ny) * size_t(grid.nz),
        "scalar grid size disagrees with its extents");

  TriMesh mesh;
  std::unordered_map<uint64_t, int> edge_vertex;
  const auto lattice = [&grid](int x, int y, int z) {
    return (uint64_t(z) * uint64_t(grid.ny) + uint64_t(y)) * uint64_t(grid.nx) +
           uint64_t(x);
  };

  for (int iz = 0; iz + 1 < grid.nz; ++iz)
    for (int iy = 0; iy + 1 < grid.ny; ++iy)
      for (int ix = 0; ix + 1 < grid.nx; ++ix) {
        float v[8];
        int ci = 0;
        for (int c = 0; c < 8; ++c) {
          v[c] = grid.at(ix + kCorner[c][0], iy + kCorner[c][1],
                         iz + kCorner[c][2]);
          if (v[c] < iso) ci |= 1 << c;
        }
        const uint16_t edges = mc::kEdgeTable[ci];
        if (edges == 0) continue;

        int ev[12];
        for (int e = 0; e < 12; ++e) {
          if (!(edges & (1u << e))) continue;
          const int a = kEdgeEnds[e][0], b = kEdgeEnds[e][1];
          const int pa[3] = {ix + kCorner[a][0], iy + kCorner[a][1],
                             iz + kCorner[a][2]};
          const int pb[3] = {ix + kCorner[b][0], iy + kCorner[b][1],
                             iz + kCorner[b][2]};
          int axis = 0;
          while (pa[axis] == pb[axis]) ++axis;
          const int* lo = pa[axis] < pb[axis] ? pa : pb;
          const uint64_t key = lattice(lo[0], lo[1], lo[2]) * 3 + uint64_t(axis);

          auto it = edge_vertex.find(key);
          if (it == edge_vertex.end()) {
            const float va = v[a], vb = v[b];
            double t = std::abs(vb - va) < 1e-12 ? 0.5
                                                 : double(iso - va) / (vb - va);
            t = std::clamp(t, 0.0, 1.0);
            Vec3d p;
            for (int d = 0; d < 3; ++d)
              p[d] = grid.origin[d] +
                     (pa[d] + t * (pb[d] - pa[d])) * grid.spacing[d];
            it = edge_vertex.emplace(key, int(mesh.verts.size())).first;
            mesh.verts.push_back(p.cast<float>());
          }
          ev[e] = it->second;
        }
        const int8_t* tri = mc::kTriTable[ci];
        for (int i = 0; tri[i] != -1; i += 3)
          mesh.faces.push_back({ev[tri[i]], ev[tri[i + 1]], ev[tri[i + 2]]});
      }
  return mesh;
}

// --- nearest neighbors ---------------------------------------------------------

KdTree::KdTree(std::vector<Vec3f> points) {
  check(!points.empty(), "k-d tree needs a nonempty cloud");
  items_.reserve(points.size());
  for (size_t i = 0; i < points.size(); ++i)
    items_.push_back({points[i], int(i)});
  axis_.assign(points.size(), 0);
  build(0, int(points.size()));
}

void KdTree::build(int lo, int hi) {
  if (hi - lo <= 1) return;
  Vec3f mn = items_[size_t(lo)].p, mx = mn;
  for (int i = lo + 1; i < hi; ++i) {
    mn = mn.cwiseMin(items_[size_t(i)].p);
    mx = mx.cwiseMax(items_[size_t(i)].p);
  }
  int axis = 0;
  (mx - mn).maxCoeff(&axis);
  const int mid = (lo + hi) / 2;
  std::nth_element(items_.begin() + lo, items_.begin() + mid,
                   items_.begin() + hi, [axis](const Item& a, const Item& b) {
                     return a.p[axis] < b.p[axis];
                   });
  axis_[size_t(mid)] = int8_t(axis);
  build(lo, mid);
  build(mid + 1, hi);
}

void KdTree::search(int lo, int hi, const Vec3f& q, float& best_d2,
                    int& best) const {
  if (lo >= hi) return;
  const int mid = (lo + hi) / 2;
  const Item& it = items_[size_t(mid)];
  const float d2 = (it.p - q).squaredNorm();
  if (d2 < best_d2) {
    best_d2 = d2;
    best = it.orig;
  }
  const int axis = axis_[size_t(mid)];
  const float delta = q[axis] - it.p[axis];
  if (delta < 0) {
    search(lo, mid, q, best_d2, best);
    if (delta * delta < best_d2) search(mid + 1, hi, q, best_d2, best);
  } else {
    search(mid + 1, hi, q, best_d2, best);
    if (delta * delta < best_d2) search(lo, mid, q, best_d2, best);
  }
}

std::pair<int, float> KdTree::nearest(const Vec3f& q) const {
  float best_d2 = std::numeric_limits<float>::infinity();
  int best = -1;
  search(0, int(items_.size()), q, best_d2, best);
  return {best, best_d2};
}

double chamfer_l1(const std::vector<Vec3f>& a, const std::vector<Vec3f>& b) {
  check(!a.empty() && !b.empty(), "chamfer distance needs nonempty clouds");
  const KdTree ta(a), tb(b);
  double da = 0, db = 0;
  for (const auto& p : a) da += std::sqrt(double(tb.nearest(p).second));
  for (const auto& p : b) db += std::sqrt(double(ta.nearest(p).second));
  return 0.5 * (da / double(a.size()) + db / double(b.size()));
}

std::vector<Vec3f> sample_mesh_points(const TriMesh& mesh, int count, Rng& rng) {
  check(count > 0, "point sample count must be positive");
  check(!mesh.faces.empty(), "cannot sample points from a faceless mesh");
  std::vector<double> cum(mesh.faces.size());
  double total = 0;
  for (size_t f = 0; f < mesh.faces.size(); ++f) {
    total += mesh.face_area(int(f));
    cum[f] = total;
  }
  check(total > 0, "mesh has zero surface area");

  std::vector<Vec3f> pts;
  pts.reserve(size_t(count));
  for (int k = 0; k < count; ++k) {
    const double r = rng.uniform() * total;
    const size_t f = size_t(
        std::upper_bound(cum.begin(), cum.end(), r) - cum.begin());
    const auto& face = mesh.faces[std::min(f, mesh.faces.size() - 1)];
    const Vec3f& A = mesh.verts[size_t(face[0])];
    const Vec3f& B = mesh.verts[size_t(face[1])];
    const Vec3f& C = mesh.verts[size_t(face[2])];
    const float su = std::sqrt(float(rng.uniform()));
    const float r2 = float(rng.uniform());
    pts.push_back((1 - su) * A + su * (1 - r2) * B + su * r2 * C);
  }
  return pts;
}

// --- ray/mesh visibility ----------------------------------------------------------

TriangleBvh::TriangleBvh(const TriMesh& mesh) {
  check(!mesh.faces.empty(), "visibility BVH needs a mesh with faces");
  std::vector<int> order(mesh.faces.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = int(i);

  std::vector<std::array<Vec3d, 3>> src(mesh.faces.size());
  for (size_t f = 0; f < mesh.faces.size(); ++f)
    for (int k = 0; k < 3; ++k)
      src[f][size_t(k)] = mesh.verts[size_t(mesh.faces[f][k])].cast<double>();

  // Build with triangles referenced through `order`, then bake leaf ranges.
  tris_.reserve(src.size());
  struct Builder {
    std::vector<Node>& nodes;
    std::vector<std::array<Vec3d, 3>>& tris;
    const std::vector<std::array<Vec3d, 3>>& src;

    int run(std::vector<int>& order, int lo, int hi) {
      const int idx = int(nodes.size());
      nodes.push_back({});
      Vec3d mn = Vec3d::Constant(std::numeric_limits<double>::infinity());
      Vec3d mx = -mn;
      for (int i = lo; i < hi; ++i)
        for (const auto& p : src[size_t(order[size_t(i)])]) {
          mn = mn.cwiseMin(p);
          mx = mx.cwiseMax(p);
        }
      Node node;
      node.lo = mn.cast<float>();
      node.hi = mx.cast<float>();
      if (hi - lo <= 4) {
        node.start = int(tris.size());
        node.count = hi - lo;
        for (int i = lo; i < hi; ++i)
          tris.push_back(src[size_t(order[size_t(i)])]);
      } else {
        int axis = 0;
        (mx - mn).maxCoeff(&axis);
        const int mid = (lo + hi) / 2;
        std::nth_element(order.begin() + lo, order.begin() + mid,
                         order.begin() + hi, [&](int a, int b) {
                           double ca = 0, cb = 0;
                           for (int k = 0; k < 3; ++k) {
                             ca += src[size_t(a)][size_t(k)][axis];
                             cb += src[size_t(b)][size_t(k)][axis];
                           }
                           return ca < cb;
                         });
        node.left = run(order, lo, mid);
        node.right = run(order, mid, hi);
      }
      nodes[size_t(idx)] = node;
      return idx;
    }
  };
  Builder builder{nodes_, tris_, src};
  builder.run(order, 0, int(order.size()));
}

namespace {

bool aabb_hit(const Vec3f& lo, const Vec3f& hi, const Vec3d& o, const Vec3d& d,
              double t_max) {
  double t0 = 0, t1 = t_max;
  for (int a = 0; a < 3; ++a) {
    if (std::abs(d[a]) < 1e-15) {
      if (o[a] < double(lo[a]) || o[a] > double(hi[a])) return false;
      continue;
    }
    const double inv = 1.0 / d[a];
    double ta = (double(lo[a]) - o[a]) * inv;
    double tb = (double(hi[a]) - o[a]) * inv;
    if (ta > tb) std::swap(ta, tb);
    t0 = std::max(t0, ta);
    t1 = std::min(t1, tb);
    if (t0 > t1) return false;
  }
  return true;
}

double triangle_hit(const std::array<Vec3d, 3>& tri, const Vec3d& o,
                    const Vec3d& d) {
  const Vec3d e1 = tri[1] - tri[0], e2 = tri[2] - tri[0];
  const Vec3d pvec = d.cross(e2);
  const double det = e1.dot(pvec);
  if (std::abs(det) < 1e-14) return std::numeric_limits<double>::infinity();
  const double inv = 1.0 / det;
  const Vec3d tvec = o - tri[0];
  const double u = tvec.dot(pvec) * inv;
  if (u < -1e-9 || u > 1 + 1e-9) return std::numeric_limits<double>::infinity();
  const Vec3d qvec = tvec.cross(e1);
  const double v = d.dot(qvec) * inv;
  if (v < -1e-9 || u + v > 1 + 1e-9)
    return std::numeric_limits<double>::infinity();
  const double t = e2.dot(qvec) * inv;
  return t > 1e-9 ? t : std::numeric_limits<double>::infinity();
}

}  // namespace

double TriangleBvh::first_hit(const Vec3d& origin, const Vec3d& dir) const {
  double best = std::numeric_limits<double>::infinity();
  int stack[64];
  int sp = 0;
  stack[sp++] = 0;
  while (sp > 0) {
    const Node& node = nodes_[size_t(stack[--sp])];
    if (!aabb_hit(node.lo, node.hi, origin, dir, best)) continue;
    if (node.left < 0) {
      for (int i = 0; i < node.count; ++i)
        best = std::min(best,
                        triangle_hit(tris_[size_t(node.start + i)], origin, dir));
    } else {
      stack[sp++] = node.left;
      stack[sp++] = node.right;
    }
  }
  return best;
}

TriMesh cull_mesh(const TriMesh& mesh, const std::vector<CameraPosed>& cameras,
                  const std::vector<Eigen::ArrayXXf>& masks, double tolerance) {
  check(!cameras.empty(), "visibility culling needs at least one camera");
  if (mesh.faces.empty()) return {};
  if (!masks.empty())
    check(masks.size() == cameras.size(),
          "object masks must match the camera list one-to-one");

  const TriangleBvh bvh(mesh);
  std::vector<char> keep(mesh.faces.size(), 0);
  for (size_t f = 0; f < mesh.faces.size(); ++f) {
    const Vec3d centroid = mesh.face_centroid(int(f)).cast<double>();
    bool visible = false;
    bool foreground = masks.empty();
    for (size_t ci = 0; ci < cameras.size(); ++ci) {
      const auto& cam = cameras[ci];
      if (!cam.frustum_contains(centroid)) continue;
      if (!visible) {
        const Vec3d o = cam.origin();
        const double dist = (centroid - o).norm();
        const Vec3d dir = (centroid - o) / dist;
        if (bvh.first_hit(o, dir) >= dist - tolerance) visible = true;
      }
      if (!foreground) {
        double u, v, depth;
        cam.project(centroid, u, v, depth);
        const int px = std::clamp(int(u), 0, cam.width - 1);
        const int py = std::clamp(int(v), 0, cam.height - 1);
        if (masks[ci](py, px) > 0.5f) foreground = true;
      }
      if (visible && foreground) break;
    }
    keep[f] = visible && foreground;
  }

  TriMesh out;
  std::vector<int> remap(mesh.verts.size(), -1);
  for (size_t f = 0; f < mesh.faces.size(); ++f) {
    if (!keep[f]) continue;
    std::array<int, 3> face;
    for (int k = 0; k < 3; ++k) {
      const int v = mesh.faces[f][k];
      if (remap[size_t(v)] < 0) {
        remap[size_t(v)] = int(out.verts.size());
        out.verts.push_back(mesh.verts[size_t(v)]);
      }
      face[size_t(k)] = remap[size_t(v)];
    }
    out.faces.push_back(face);
  }
  return out;
}

}  // namespace rgbdprior::eval
