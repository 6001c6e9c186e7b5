#pragma once

#include "mva/errors.hpp"
#include "mva/geometry.hpp"

namespace mva {

// Pinhole camera. Extrinsics are world-to-camera: x_cam = R * x_world + t.
// The camera looks along +z in its own frame; pixel coordinates name texel
// centers directly.
struct Camera {
  double fx = 100, fy = 100;
  double cx = 0, cy = 0;
  int width = 0, height = 0;
  Mat3 rotation;  // world-to-camera
  Vec3 translation;
  double near = 0.1, far = 10.0;

  Vec3 center() const {  // camera position in world coordinates
    return rotation.transposed() * (Vec3{0, 0, 0} - translation) ;
  }

  Vec3 forward_axis() const {  // +z of the camera frame, in world coordinates
    return rotation.transposed() * Vec3{0, 0, 1};
  }

  void validate() const {
    if (!(near > 0) || !(far > near))
      throw ValidationError("camera: need 0 < near < far");
    if (width < 1 || height < 1) throw ValidationError("camera: empty image plane");
    // rotation orthonormality to 1e-9
    Mat3 rrt = rotation * rotation.transposed();
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) {
        const double want = i == j ? 1.0 : 0.0;
        if (std::abs(rrt.m[static_cast<size_t>(3 * i + j)] - want) > 1e-9)
          throw ValidationError("camera: rotation is not orthonormal");
      }
  }
};

struct Ray {
  Vec3 origin;
  Vec3 dir;  // unit
};

inline Ray pixel_ray(const Camera& cam, double px, double py) {
  const Vec3 dir_cam{(px - cam.cx) / cam.fx, (py - cam.cy) / cam.fy, 1.0};
  return Ray{cam.center(), normalized(cam.rotation.transposed() * dir_cam)};
}

// Projects a world point; returns false when behind the camera.
inline bool project(const Camera& cam, const Vec3& p, double* px, double* py, double* depth) {
  const Vec3 pc = cam.rotation * p + cam.translation;
  if (pc.z <= 1e-9) return false;
  *px = cam.fx * pc.x / pc.z + cam.cx;
  *py = cam.fy * pc.y / pc.z + cam.cy;
  *depth = pc.z;
  return true;
}

}  // namespace mva
