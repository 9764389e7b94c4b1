// Copyright Contributors to the uwsplat Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "uwsplat/gaussian.hpp"
#include "uwsplat/rasterizer.hpp"

#include <functional>
#include <random>

namespace uwtest {

/// Central finite difference of a scalar function at x.
template <typename Fn>
double fd_scalar(Fn &&fn, double x, double h = 1e-5) {
  return (fn(x + h) - fn(x - h)) / (2.0 * h);
}

/// Mixed absolute/relative agreement: |a - b| <= tol * max(1, |a|, |b|).
inline bool close(double a, double b, double tol) {
  return std::abs(a - b) <= tol * std::max({1.0, std::abs(a), std::abs(b)});
}

struct Rng {
  std::mt19937_64 gen;
  explicit Rng(std::uint64_t seed) : gen(seed) {}

  double uniform(double lo = 0.0, double hi = 1.0) {
    return std::uniform_real_distribution<double>(lo, hi)(gen);
  }
  double normal(double mean = 0.0, double stddev = 1.0) {
    return std::normal_distribution<double>(mean, stddev)(gen);
  }
  uwsplat::Vec3<double> vec3(double lo, double hi) {
    return {uniform(lo, hi), uniform(lo, hi), uniform(lo, hi)};
  }
  uwsplat::Quat<double> unit_quat() {
    uwsplat::Quat<double> q(normal(), normal(), normal(), normal());
    if (q.norm() < 1e-6)
      q = uwsplat::Quat<double>::Identity();
    return q.normalized();
  }
  uwsplat::Vec3<double> unit_vec3() {
    uwsplat::Vec3<double> v(normal(), normal(), normal());
    while (v.norm() < 1e-6)
      v = {normal(), normal(), normal()};
    return v.normalized();
  }
};

/// Independent quaternion-to-rotation-matrix formula (textbook expansion,
/// not Eigen's) used as an oracle against covariance_from.
inline uwsplat::Mat3<double> quat_to_matrix_oracle(double w, double x,
                                                   double y, double z) {
  const double n = std::sqrt(w * w + x * x + y * y + z * z);
  w /= n;
  x /= n;
  y /= n;
  z /= n;
  uwsplat::Mat3<double> r;
  r(0, 0) = 1 - 2 * (y * y + z * z);
  r(0, 1) = 2 * (x * y - w * z);
  r(0, 2) = 2 * (x * z + w * y);
  r(1, 0) = 2 * (x * y + w * z);
  r(1, 1) = 1 - 2 * (x * x + z * z);
  r(1, 2) = 2 * (y * z - w * x);
  r(2, 0) = 2 * (x * z - w * y);
  r(2, 1) = 2 * (y * z + w * x);
  r(2, 2) = 1 - 2 * (x * x + y * y);
  return r;
}

/// Tile-free per-pixel blend over all splats, used as the rasterizer oracle.
/// Same acceptance thresholds and termination rule as the production path.
template <typename T>
uwsplat::RenderOutput<T>
reference_render(const std::vector<uwsplat::Splat2D<T>> &splats, int width,
                 int height, const uwsplat::Vec3<T> &background) {
  using namespace uwsplat;
  std::vector<int> order(splats.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    if (splats[a].depth != splats[b].depth)
      return splats[a].depth < splats[b].depth;
    return splats[a].index < splats[b].index;
  });

  RenderOutput<T> out;
  out.color = Image<T>(height, width, 3);
  out.depth = Image<T>(height, width, 1);
  out.alpha = Image<T>(height, width, 1);
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      const T px = T(x) + T(0.5), py = T(y) + T(0.5);
      long double acc[3] = {0, 0, 0}, acc_d = 0, trans = 1;
      for (int idx : order) {
        const Splat2D<T> &s = splats[std::size_t(idx)];
        const T dx = px - s.mean2d.x(), dy = py - s.mean2d.y();
        const T m = s.inv_xx * dx * dx + T(2) * s.inv_xy * dx * dy +
                    s.inv_yy * dy * dy;
        if (m < T(0))
          continue;
        const T a = std::min(T(kAlphaClamp), s.opacity * std::exp(T(-0.5) * m));
        if (a < T(kMinAlpha))
          continue;
        const long double w = (long double)(a)*trans;
        for (int ch = 0; ch < 3; ++ch)
          acc[ch] += w * (long double)s.color[ch];
        acc_d += w * (long double)s.depth;
        trans *= 1 - (long double)a;
        if (trans < kTransmittanceFloor)
          break;
      }
      for (int ch = 0; ch < 3; ++ch)
        out.color.at(y, x, ch) = T(acc[ch] + trans * (long double)background[ch]);
      out.depth.at(y, x) = T(acc_d);
      out.alpha.at(y, x) = T(1 - trans);
    }
  }
  return out;
}

} // namespace uwtest
