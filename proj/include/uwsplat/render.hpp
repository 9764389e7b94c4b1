// Copyright Contributors to the uwsplat Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "uwsplat/gaussian.hpp"
#include "uwsplat/rasterizer.hpp"
#include "uwsplat/sh.hpp"

#include <optional>
#include <vector>

namespace uwsplat {

/// Projects every Gaussian and fills colors from SH at the camera-ray
/// direction. Culled Gaussians are dropped; Splat2D::index maps back.
template <typename T>
std::vector<Splat2D<T>> project_cloud(const GaussianCloud<T> &cloud,
                                      const Camera &camera,
                                      const ProjectionOptions &opts = {}) {
  std::vector<Splat2D<T>> splats;
  splats.reserve(cloud.size());
  const Vec3<T> center = camera.center().template cast<T>();
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    auto s = project(cloud.positions[i], cloud.rotations[i],
                     cloud.log_scales[i], cloud.logit_opacities[i], camera,
                     opts);
    if (!s)
      continue;
    const Vec3<T> dir = (cloud.positions[i] - center).normalized();
    s->color = eval_sh(cloud.sh_at(i), cloud.basis(), cloud.sh_degree, dir);
    s->index = std::int32_t(i);
    splats.push_back(*s);
  }
  return splats;
}

/// Clean (medium-free) forward render of a cloud.
template <typename T>
RenderOutput<T> render_cloud(const GaussianCloud<T> &cloud,
                             const Camera &camera, const Vec3<T> &background,
                             const ProjectionOptions &opts = {},
                             RasterScratch<T> *scratch = nullptr,
                             int threads = 1) {
  const auto splats = project_cloud(cloud, camera, opts);
  return rasterize(splats, camera.width, camera.height, background, scratch,
                   threads);
}

} // namespace uwsplat
