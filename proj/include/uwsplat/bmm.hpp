// Copyright Contributors to the uwsplat Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "uwsplat/common.hpp"
#include "uwsplat/image.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

namespace uwsplat {

/// Robust inlier estimation for scenes with moving distractors.  A pixel is
/// kept for the photometric loss when any of three tests accepts it: a
/// per-pixel residual threshold, a 3x3 spatial diffusion of that mask, or a
/// patchwise classification against the surrounding context.

struct BmmConfig {
  double trim_quantile = 0.8; // rho: inlier fraction kept by the threshold
  double t_star = 0.5;        // diffusion acceptance level in [0, 1]
  double t_r = 0.6;           // patch-context acceptance level in [0, 1]
  int stages = 3; // how many mask stages to OR together during training:
                  // 1 = threshold only, 2 = + diffusion, 3 = + patch context
};

template <typename T> struct MotionMask {
  Mask omega1, omega2, omega3, omega;
  Image<T> residual;   // per-pixel channel L2 norm, H x W x 1
  T t_eps_used = T(0); // threshold applied to produce omega1
  T next_t_eps = T(0); // trimmed quantile of this frame's residuals
};

/// Threshold carried into the first iteration: everything is an inlier until
/// a residual history exists.
template <typename T> constexpr T kInitialTEps = std::numeric_limits<T>::infinity();

template <typename T>
Image<T> bmm_residual(const Image<T> &rendered, const Image<T> &target) {
  require_same_shape(rendered, target, "bmm_residual");
  Image<T> out(rendered.height(), rendered.width(), 1);
  for (int y = 0; y < rendered.height(); ++y)
    for (int x = 0; x < rendered.width(); ++x) {
      T s = 0;
      for (int ch = 0; ch < rendered.channels(); ++ch) {
        const T d = rendered.at(y, x, ch) - target.at(y, x, ch);
        s += d * d;
      }
      out.at(y, x) = std::sqrt(s);
    }
  return out;
}

/// Nearest-rank quantile of the residual map: the value at sorted index
/// ceil(rho * n) - 1.  Thresholding with <= keeps at least a rho fraction.
template <typename T> T bmm_quantile(const Image<T> &residual, double rho) {
  if (residual.size() == 0)
    fail(ErrorCode::NoValidPixels, "bmm_quantile: empty residual map");
  if (rho <= 0 || rho > 1)
    fail(ErrorCode::ConfigError, "bmm_quantile: trim quantile out of (0, 1]");
  std::vector<T> sorted(residual.data());
  std::sort(sorted.begin(), sorted.end());
  const std::size_t n = sorted.size();
  std::size_t k = std::size_t(std::ceil(rho * double(n)));
  k = std::min(std::max<std::size_t>(k, 1), n) - 1;
  return sorted[k];
}

template <typename T> Mask bmm_mask1(const Image<T> &residual, T t_eps) {
  Mask out(residual.height(), residual.width(), 1);
  for (std::size_t i = 0; i < residual.size(); ++i)
    out.data()[i] = residual.data()[i] <= t_eps ? 1 : 0;
  return out;
}

/// 3x3 box diffusion with replicate padding, accepted where the local
/// inlier density reaches t_star.
inline Mask bmm_mask2(const Mask &omega1, double t_star) {
  const int h = omega1.height(), w = omega1.width();
  Mask out(h, w, 1);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      int s = 0;
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) {
          const int yy = std::clamp(y + dy, 0, h - 1);
          const int xx = std::clamp(x + dx, 0, w - 1);
          s += omega1.at(yy, xx);
        }
      out.at(y, x) = (double(s) / 9.0 >= t_star) ? 1 : 0;
    }
  return out;
}

/// Each 8x8 patch (grid anchored at the origin; edge patches may be
/// smaller) is accepted as a whole when the mean of omega2 over the
/// patch's centered 16x16 neighborhood, clipped to the image, reaches t_r.
inline Mask bmm_mask3(const Mask &omega2, double t_r) {
  constexpr int kPatch = 8, kHalo = 4;
  const int h = omega2.height(), w = omega2.width();
  Mask out(h, w, 1);
  for (int py = 0; py < h; py += kPatch)
    for (int px = 0; px < w; px += kPatch) {
      const int y0 = std::max(py - kHalo, 0);
      const int y1 = std::min(py + kPatch + kHalo, h);
      const int x0 = std::max(px - kHalo, 0);
      const int x1 = std::min(px + kPatch + kHalo, w);
      long sum = 0;
      for (int y = y0; y < y1; ++y)
        for (int x = x0; x < x1; ++x)
          sum += omega2.at(y, x);
      const double mean = double(sum) / double((y1 - y0) * (x1 - x0));
      const std::uint8_t v = (mean >= t_r) ? 1 : 0;
      for (int y = py; y < std::min(py + kPatch, h); ++y)
        for (int x = px; x < std::min(px + kPatch, w); ++x)
          out.at(y, x) = v;
    }
  return out;
}

inline Mask bmm_combine(const Mask &m1, const Mask &m2, const Mask &m3) {
  require_same_shape(m1, m2, "bmm_combine");
  require_same_shape(m1, m3, "bmm_combine");
  Mask out(m1.height(), m1.width(), 1);
  for (std::size_t i = 0; i < out.size(); ++i)
    out.data()[i] = (m1.data()[i] | m2.data()[i] | m3.data()[i]) ? 1 : 0;
  return out;
}

/// Full pipeline for one frame.  `t_eps` is the threshold carried from the
/// previous iteration; the returned mask carries the quantile to use next.
template <typename T>
MotionMask<T> compute_motion_mask(const Image<T> &rendered,
                                  const Image<T> &target, T t_eps,
                                  const BmmConfig &cfg = {}) {
  MotionMask<T> mm;
  mm.residual = bmm_residual(rendered, target);
  mm.t_eps_used = t_eps;
  mm.next_t_eps = bmm_quantile(mm.residual, cfg.trim_quantile);
  mm.omega1 = bmm_mask1(mm.residual, t_eps);
  mm.omega2 = bmm_mask2(mm.omega1, cfg.t_star);
  mm.omega3 = bmm_mask3(mm.omega2, cfg.t_r);
  mm.omega = bmm_combine(mm.omega1, mm.omega2, mm.omega3);
  return mm;
}

} // namespace uwsplat
