#pragma once

#include <array>
#include <string>
#include <vector>

#include "rgbdprior/common.hpp"

namespace rgbdprior {

struct TriMesh {
  std::vector<Vec3f> verts;
  std::vector<std::array<int, 3>> faces;

  bool empty() const { return faces.empty(); }

  Vec3f face_centroid(int f) const {
    const auto& t = faces[size_t(f)];
    return (verts[size_t(t[0])] + verts[size_t(t[1])] + verts[size_t(t[2])]) /
           3.0f;
  }
  float face_area(int f) const {
    const auto& t = faces[size_t(f)];
    const Vec3f e1 = verts[size_t(t[1])] - verts[size_t(t[0])];
    const Vec3f e2 = verts[size_t(t[2])] - verts[size_t(t[0])];
    return 0.5f * e1.cross(e2).norm();
  }
};

void save_ply(const std::string& path, const TriMesh& mesh);
TriMesh load_ply(const std::string& path);

// Point cloud as ASCII PLY vertices (no faces).
void save_ply_points(const std::string& path, const std::vector<Vec3f>& pts);

}  // namespace rgbdprior
