// Copyright Contributors to the uwsplat Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "uwsplat/camera.hpp"
#include "uwsplat/common.hpp"
#include "uwsplat/image.hpp"

#include <map>
#include <string>
#include <vector>

namespace uwsplat {

struct InitPoint {
  Vec3<double> position = Vec3<double>::Zero();
  Vec3<double> color = Vec3<double>::Zero(); // RGB in [0, 1]
};

struct View {
  Camera camera;     // posed camera (intrinsics + this view's extrinsics)
  int intrinsics_id = 0;
  std::string name;  // image file name, unique within a scene
  ImageF image;      // RGB in [0, 1]
  ImageF depth;      // optional pseudo-depth in [0, 1]; empty if absent
  bool has_depth() const { return depth.size() > 0; }
};

/// A posed multi-view capture: cameras, images with optional relative
/// depth maps, and the sparse initialization points.
struct SceneBundle {
  std::map<int, Camera> intrinsics; // as parsed; poses live on the views
  std::vector<View> views;
  std::vector<InitPoint> init_points;
  std::vector<std::size_t> train_idx, test_idx;

  /// Every eighth view (by sorted name order) is held out for testing.
  void make_split() {
    train_idx.clear();
    test_idx.clear();
    for (std::size_t i = 0; i < views.size(); ++i)
      (i % 8 == 0 ? test_idx : train_idx).push_back(i);
  }

  /// Bounding radius used for learning-rate scaling and densify limits:
  /// 1.1x the max camera-center distance from their centroid, falling back
  /// to the init-point spread for degenerate rigs.
  double scene_radius() const {
    auto spread = [](const std::vector<Vec3<double>> &pts) {
      if (pts.empty())
        return 0.0;
      Vec3<double> c = Vec3<double>::Zero();
      for (const auto &p : pts)
        c += p;
      c /= double(pts.size());
      double r = 0;
      for (const auto &p : pts)
        r = std::max(r, (p - c).norm());
      return r;
    };
    std::vector<Vec3<double>> centers;
    centers.reserve(views.size());
    for (const auto &v : views)
      centers.push_back(v.camera.center());
    double r = 1.1 * spread(centers);
    if (r <= 0) {
      std::vector<Vec3<double>> pts;
      pts.reserve(init_points.size());
      for (const auto &p : init_points)
        pts.push_back(p.position);
      r = 1.1 * spread(pts);
    }
    return r > 0 ? r : 1.0;
  }

  void validate() const {
    for (const auto &v : views)
      if (intrinsics.find(v.intrinsics_id) == intrinsics.end())
        fail(ErrorCode::MalformedLine,
             "view '" + v.name + "' references missing camera");
    if (init_points.empty())
      fail(ErrorCode::MissingInitialPoints, "scene has no initial points");
  }
};

} // namespace uwsplat
