// Copyright Contributors to the uwsplat Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "uwsplat/common.hpp"
#include "uwsplat/gaussian.hpp"
#include "uwsplat/rasterizer.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

namespace uwsplat {

/// Adaptive density control for attenuating media.  Screen-space position
/// gradients shrink with the medium's direct transmittance, so raw 3DGS
/// thresholding under-densifies distant or deep regions; the gradients are
/// rescaled by the inverse attenuation (clamped), damped near the camera,
/// and averaged per covered pixel instead of per view.

struct DensityControlConfig {
  double tau = 2e-4;            // densify when the averaged gradient reaches this
  int densify_interval = 100;   // iterations between events
  int densify_start = 500;      // first eligible iteration
  int densify_end = 15000;      // last eligible iteration
  double prune_opacity = 0.005; // remove Gaussians below this opacity
  double max_screen_radius_px = 0; // 0 disables the screen-size prune
  double comp_clamp_max = 20.0;    // cap on the 1/T compensation factor
  double z_damp_ref = 1.0;         // depth where near-camera damping ends
  double clone_scale_frac = 0.01;  // clone below this fraction of scene radius
  double split_scale_div = 1.6;    // child scale divisor when splitting
  bool enable_physics_comp = true;
  bool enable_pixel_weighting = true;
  bool enable_z_damp = true;

  void validate() const {
    if (!(tau > 0))
      fail(ErrorCode::ConfigError, "density: tau must be positive");
    if (densify_interval <= 0 || densify_start > densify_end)
      fail(ErrorCode::ConfigError, "density: bad densify interval bounds");
    if (comp_clamp_max < 1)
      fail(ErrorCode::ConfigError, "density: comp_clamp_max must be >= 1");
    if (!(z_damp_ref > 0) || !(split_scale_div > 0))
      fail(ErrorCode::ConfigError, "density: reference scales must be positive");
  }
};

inline bool densify_due(int iteration, const DensityControlConfig &cfg) {
  return iteration >= cfg.densify_start && iteration <= cfg.densify_end &&
         iteration % cfg.densify_interval == 0;
}

/// g' = g * min(1/T_D, clamp) * min(1, z / z_ref).  T_D is the mean direct
/// transmittance over RGB at the Gaussian; z its camera-ray depth.
template <typename T>
T compensate_gradient(T grad_norm, T t_d_mean, T z,
                      const DensityControlConfig &cfg) {
  T comp = T(1);
  if (cfg.enable_physics_comp) {
    comp = T(cfg.comp_clamp_max);
    if (t_d_mean > T(0))
      comp = std::min(T(1) / t_d_mean, T(cfg.comp_clamp_max));
  }
  T damp = T(1);
  if (cfg.enable_z_damp)
    damp = std::min(T(1), z / T(cfg.z_damp_ref));
  return grad_norm * comp * damp;
}

/// Folds one view's per-splat statistics into the cloud accumulators.
/// `t_d_mean` holds the mean direct transmittance per splat (same order as
/// `splats`); pass an empty span to skip compensation.
template <typename T>
void accumulate_density_stats(GaussianCloud<T> &cloud,
                              const std::vector<Splat2D<T>> &splats,
                              const std::vector<CoverageStat<T>> &stats,
                              const std::vector<T> &t_d_mean,
                              const DensityControlConfig &cfg) {
  if (splats.size() != stats.size())
    fail(ErrorCode::ShapeMismatch, "density: splats/stats size mismatch");
  if (!t_d_mean.empty() && t_d_mean.size() != splats.size())
    fail(ErrorCode::ShapeMismatch, "density: t_d_mean size mismatch");
  for (std::size_t i = 0; i < splats.size(); ++i) {
    const std::size_t gi = splats[i].index;
    cloud.max_screen_radius[gi] =
        std::max(cloud.max_screen_radius[gi], T(splats[i].radius));
    if (stats[i].covered_px <= 0)
      continue;
    const T td = t_d_mean.empty() ? T(1) : t_d_mean[i];
    const T g = compensate_gradient(stats[i].grad_norm, td, splats[i].depth, cfg);
    const T w = cfg.enable_pixel_weighting ? T(stats[i].covered_px) : T(1);
    cloud.grad_accum[gi] += g * w;
    cloud.coverage_accum[gi] += w;
  }
}

template <typename T>
T averaged_gradient(const GaussianCloud<T> &cloud, std::size_t i) {
  return cloud.coverage_accum[i] > T(0)
             ? cloud.grad_accum[i] / cloud.coverage_accum[i]
             : T(0);
}

struct DensifyStats {
  std::size_t cloned = 0, split = 0, pruned = 0;
  // source[i]: index the new cloud's Gaussian i was carried over from, or
  // -1 for freshly created ones (optimizer state must be reset for those)
  std::vector<std::ptrdiff_t> source;
};

namespace detail {

template <typename T>
void append_from(GaussianCloud<T> &dst, const GaussianCloud<T> &src,
                 std::size_t i) {
  dst.positions.push_back(src.positions[i]);
  dst.rotations.push_back(src.rotations[i]);
  dst.log_scales.push_back(src.log_scales[i]);
  dst.logit_opacities.push_back(src.logit_opacities[i]);
  dst.sh.insert(dst.sh.end(), src.sh_at(i), src.sh_at(i) + src.sh_stride());
  dst.grad_accum.push_back(T(0));
  dst.coverage_accum.push_back(T(0));
  dst.max_screen_radius.push_back(T(0));
}

} // namespace detail

/// One densification event: clone small high-gradient Gaussians, split
/// large ones into two children sampled from the parent, prune transparent
/// or oversized ones, and zero the accumulators.
template <typename T>
DensifyStats densify_and_prune(GaussianCloud<T> &cloud,
                               const DensityControlConfig &cfg, T scene_radius,
                               std::mt19937_64 &rng) {
  cfg.validate();
  const std::size_t n = cloud.size();
  const T clone_limit = T(cfg.clone_scale_frac) * scene_radius;
  const T log_div = std::log(T(cfg.split_scale_div));
  std::normal_distribution<T> gauss(T(0), T(1));

  GaussianCloud<T> out;
  out.sh_degree = cloud.sh_degree;
  DensifyStats st;

  auto keep = [&](std::size_t i) {
    if (cloud.opacity(i) < T(cfg.prune_opacity))
      return false;
    if (cfg.max_screen_radius_px > 0 &&
        cloud.max_screen_radius[i] > T(cfg.max_screen_radius_px))
      return false;
    return true;
  };

  for (std::size_t i = 0; i < n; ++i) {
    if (!keep(i)) {
      ++st.pruned;
      continue;
    }
    const bool grow = averaged_gradient(cloud, i) >= T(cfg.tau);
    const T max_scale = cloud.scale(i).maxCoeff();
    if (!grow || max_scale <= clone_limit) {
      detail::append_from(out, cloud, i);
      st.source.push_back(std::ptrdiff_t(i));
      if (grow) { // clone: exact duplicate, fresh optimizer state
        detail::append_from(out, cloud, i);
        st.source.push_back(-1);
        ++st.cloned;
      }
      continue;
    }
    // split: two children drawn from the parent's density, scales shrunk
    const Mat3<T> rot = cloud.rotations[i].normalized().toRotationMatrix();
    const Vec3<T> scale = cloud.scale(i);
    for (int c = 0; c < 2; ++c) {
      detail::append_from(out, cloud, i);
      st.source.push_back(-1);
      Vec3<T> local(gauss(rng) * scale[0], gauss(rng) * scale[1],
                    gauss(rng) * scale[2]);
      out.positions.back() = cloud.positions[i] + rot * local;
      out.log_scales.back() = cloud.log_scales[i].array() - log_div;
    }
    ++st.split;
  }

  if (out.size() == 0)
    fail(ErrorCode::CloudEmptyAfterPrune,
         "density: no Gaussians remain after pruning");
  cloud = std::move(out);
  return st;
}

} // namespace uwsplat
