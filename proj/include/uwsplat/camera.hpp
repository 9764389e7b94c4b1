// Copyright Contributors to the uwsplat Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "uwsplat/common.hpp"

namespace uwsplat {

/// Pinhole camera, COLMAP conventions: x_cam = R * x_world + t, +z forward,
/// +x right, +y down, pixel (0,0) at the top-left corner, continuous image
/// coordinates with pixel centers at (x + 0.5, y + 0.5).
struct Camera {
  int id = 0;
  int width = 0, height = 0;
  double fx = 0, fy = 0, cx = 0, cy = 0;
  Quat<double> rotation = Quat<double>::Identity(); // world -> camera
  Vec3<double> translation = Vec3<double>::Zero();  // camera frame

  Mat3<double> rotation_matrix() const { return rotation.toRotationMatrix(); }

  Vec3<double> center() const {
    return -(rotation.conjugate() * translation);
  }

  Vec3<double> world_to_cam(const Vec3<double> &p) const {
    return rotation * p + translation;
  }

  Vec2<double> project_point(const Vec3<double> &p_cam) const {
    return {fx * p_cam.x() / p_cam.z() + cx, fy * p_cam.y() / p_cam.z() + cy};
  }

  void validate() const {
    if (fx <= 0 || fy <= 0)
      fail(ErrorCode::MalformedLine, "camera: focal length must be positive");
    if (!(cx > 0 && cx < width && cy > 0 && cy < height))
      fail(ErrorCode::MalformedLine,
           "camera: principal point outside image bounds");
    if (std::abs(rotation.norm() - 1.0) > 1e-9)
      fail(ErrorCode::MalformedLine, "camera: quaternion not unit-norm");
  }

  /// Camera at `eye` looking toward `target`, `up` approximately up in
  /// world space. Follows the +y-down image convention.
  static Camera look_at(const Vec3<double> &eye, const Vec3<double> &target,
                        const Vec3<double> &up, int width, int height,
                        double focal) {
    Vec3<double> fwd = (target - eye).normalized();
    Vec3<double> right = fwd.cross(up).normalized();
    Vec3<double> down = fwd.cross(right).normalized();
    Mat3<double> r;
    r.row(0) = right.transpose();
    r.row(1) = down.transpose();
    r.row(2) = fwd.transpose();
    Camera cam;
    cam.width = width;
    cam.height = height;
    cam.fx = cam.fy = focal;
    cam.cx = width * 0.5;
    cam.cy = height * 0.5;
    cam.rotation = Quat<double>(r).normalized();
    cam.translation = -(r * eye);
    return cam;
  }
};

} // namespace uwsplat
