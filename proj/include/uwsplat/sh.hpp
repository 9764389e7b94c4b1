// Copyright Contributors to the uwsplat Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "uwsplat/common.hpp"

#include <array>

namespace uwsplat {

inline constexpr int kMaxShDegree = 3;

constexpr int sh_basis_count(int degree) { return (degree + 1) * (degree + 1); }

/// Real SH basis values Y_0..Y_{(deg+1)^2-1} at a unit direction, in the
/// ordering and normalization used by 3DGS-style splatting.
template <typename T>
void sh_basis(const Vec3<T> &dir, int degree, T *out) {
  static constexpr double kC0 = 0.28209479177387814;
  static constexpr double kC1 = 0.4886025119029199;
  static constexpr double kC2[5] = {1.0925484305920792, -1.0925484305920792,
                                    0.31539156525252005, -1.0925484305920792,
                                    0.5462742152960396};
  static constexpr double kC3[7] = {
      -0.5900435899266435, 2.890611442640554,  -0.4570457994644658,
      0.3731763325901154,  -0.4570457994644658, 1.445305721320277,
      -0.5900435899266435};

  const T x = dir.x(), y = dir.y(), z = dir.z();
  out[0] = T(kC0);
  if (degree < 1)
    return;
  out[1] = T(-kC1) * y;
  out[2] = T(kC1) * z;
  out[3] = T(-kC1) * x;
  if (degree < 2)
    return;
  const T xx = x * x, yy = y * y, zz = z * z;
  const T xy = x * y, yz = y * z, xz = x * z;
  out[4] = T(kC2[0]) * xy;
  out[5] = T(kC2[1]) * yz;
  out[6] = T(kC2[2]) * (T(2) * zz - xx - yy);
  out[7] = T(kC2[3]) * xz;
  out[8] = T(kC2[4]) * (xx - yy);
  if (degree < 3)
    return;
  out[9] = T(kC3[0]) * y * (T(3) * xx - yy);
  out[10] = T(kC3[1]) * xy * z;
  out[11] = T(kC3[2]) * y * (T(4) * zz - xx - yy);
  out[12] = T(kC3[3]) * z * (T(2) * zz - T(3) * xx - T(3) * yy);
  out[13] = T(kC3[4]) * x * (T(4) * zz - xx - yy);
  out[14] = T(kC3[5]) * z * (xx - yy);
  out[15] = T(kC3[6]) * x * (xx - T(3) * yy);
}

/// View-dependent color from SH coefficients (3DGS convention: +0.5 offset
/// after the basis sum, clamped below at zero). `coeffs` is channel-major:
/// coeffs[ch * basis_stride + b]. Throws DegreeOutOfRange when asked for a
/// degree above what the coefficient block stores.
template <typename T>
Vec3<T> eval_sh(const T *coeffs, int basis_stride, int degree,
                const Vec3<T> &view_dir) {
  if (degree < 0 || degree > kMaxShDegree ||
      sh_basis_count(degree) > basis_stride)
    fail(ErrorCode::DegreeOutOfRange, "eval_sh: degree out of range");
  std::array<T, 16> basis{};
  sh_basis(view_dir, degree, basis.data());
  const int nb = sh_basis_count(degree);
  Vec3<T> rgb;
  for (int ch = 0; ch < 3; ++ch) {
    T acc = T(0.5);
    const T *c = coeffs + std::size_t(ch) * basis_stride;
    for (int b = 0; b < nb; ++b)
      acc += c[b] * basis[b];
    rgb[ch] = std::max(acc, T(0));
  }
  return rgb;
}

/// Gradient of eval_sh w.r.t. the coefficients: d_coeffs[ch][b] +=
/// d_rgb[ch] * Y_b(dir), masked where the below-zero clamp was active.
template <typename T>
void eval_sh_backward(const T *coeffs, int basis_stride, int degree,
                      const Vec3<T> &view_dir, const Vec3<T> &d_rgb,
                      T *d_coeffs) {
  std::array<T, 16> basis{};
  sh_basis(view_dir, degree, basis.data());
  const int nb = sh_basis_count(degree);
  for (int ch = 0; ch < 3; ++ch) {
    const T *c = coeffs + std::size_t(ch) * basis_stride;
    T pre = T(0.5);
    for (int b = 0; b < nb; ++b)
      pre += c[b] * basis[b];
    if (pre <= T(0))
      continue; // clamped: no gradient
    T *dc = d_coeffs + std::size_t(ch) * basis_stride;
    for (int b = 0; b < nb; ++b)
      dc[b] += d_rgb[ch] * basis[b];
  }
}

} // namespace uwsplat
