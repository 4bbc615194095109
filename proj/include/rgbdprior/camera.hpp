#pragma once

#include <cmath>

#include "rgbdprior/common.hpp"

namespace rgbdprior {

// World-space ray with unit direction; t measures Euclidean distance along it.
template <typename S>
struct Ray {
  Vec3<S> origin = Vec3<S>::Zero();
  Vec3<S> dir = -Vec3<S>::UnitZ();
};

using Rayf = Ray<float>;
using Rayd = Ray<double>;

// Pinhole camera. Camera space looks down -z with y up; c2w is a rigid
// camera-to-world transform. Continuous pixel coordinates (u, v) have u
// growing rightward and v growing downward, with the projection
//   u = cx + fx * x_c / (-z_c),   v = cy - fy * y_c / (-z_c).
// Integer pixel (x, y) is sampled at its center (x + 0.5, y + 0.5).
template <typename S>
struct CameraPose {
  S fx = S(1), fy = S(1), cx = S(0), cy = S(0);
  int width = 0, height = 0;
  S near = S(0.1), far = S(10);
  Mat4<S> c2w = Mat4<S>::Identity();

  Mat3<S> rotation() const { return c2w.template topLeftCorner<3, 3>(); }
  Vec3<S> origin() const { return c2w.template topRightCorner<3, 1>(); }

  Ray<S> pixel_ray(S u, S v) const {
    Vec3<S> d_cam((u - cx) / fx, -(v - cy) / fy, S(-1));
    Ray<S> r;
    r.origin = origin();
    r.dir = (rotation() * d_cam).normalized();
    return r;
  }

  Ray<S> pixel_center_ray(int x, int y) const {
    return pixel_ray(S(x) + S(0.5), S(y) + S(0.5));
  }

  // Projects a world point; returns false if it lies at or behind the camera.
  // On success fills continuous pixel coordinates and the view depth -z_c.
  bool project(const Vec3<S>& p_world, S& u, S& v, S& depth) const {
    const Vec3<S> p_cam = rotation().transpose() * (p_world - origin());
    if (p_cam.z() >= S(0)) return false;
    depth = -p_cam.z();
    u = cx + fx * p_cam.x() / depth;
    v = cy - fy * p_cam.y() / depth;
    return true;
  }

  // True when the point projects inside the image extent with view depth in
  // [near, far].
  bool frustum_contains(const Vec3<S>& p_world) const {
    S u, v, depth;
    if (!project(p_world, u, v, depth)) return false;
    return depth >= near && depth <= far && u >= S(0) && u <= S(width) &&
           v >= S(0) && v <= S(height);
  }

  template <typename T>
  CameraPose<T> cast() const {
    CameraPose<T> out;
    out.fx = T(fx); out.fy = T(fy); out.cx = T(cx); out.cy = T(cy);
    out.width = width; out.height = height;
    out.near = T(near); out.far = T(far);
    out.c2w = c2w.template cast<T>();
    return out;
  }
};

using CameraPosef = CameraPose<float>;
using CameraPosed = CameraPose<double>;

}  // namespace rgbdprior
