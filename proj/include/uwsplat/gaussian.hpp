// Copyright Contributors to the uwsplat Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "uwsplat/camera.hpp"
#include "uwsplat/common.hpp"
#include "uwsplat/sh.hpp"

#include <optional>
#include <vector>

namespace uwsplat {

/// Learnable scene state, struct-of-arrays. Rotations are kept unit-norm
/// between optimizer steps; opacities live in logit space, scales in log
/// space. SH coefficients are channel-major per Gaussian:
/// sh[i*3*B + ch*B + b].
template <typename T> struct GaussianCloud {
  std::vector<Vec3<T>> positions;
  std::vector<Quat<T>> rotations;
  std::vector<Vec3<T>> log_scales;
  std::vector<T> logit_opacities;
  int sh_degree = 3;
  std::vector<T> sh;

  // densification accumulators (zeroed after each event)
  std::vector<T> grad_accum;     // sum of compensated grad-norm * pixels
  std::vector<T> coverage_accum; // sum of covered pixels
  std::vector<T> max_screen_radius;

  std::size_t size() const { return positions.size(); }
  int basis() const { return sh_basis_count(sh_degree); }
  int sh_stride() const { return 3 * basis(); }

  T *sh_at(std::size_t i) { return sh.data() + i * sh_stride(); }
  const T *sh_at(std::size_t i) const { return sh.data() + i * sh_stride(); }

  void resize(std::size_t n) {
    positions.resize(n, Vec3<T>::Zero());
    rotations.resize(n, Quat<T>::Identity());
    log_scales.resize(n, Vec3<T>::Zero());
    logit_opacities.resize(n, T(0));
    sh.resize(n * sh_stride(), T(0));
    grad_accum.resize(n, T(0));
    coverage_accum.resize(n, T(0));
    max_screen_radius.resize(n, T(0));
  }

  void reset_accumulators() {
    std::fill(grad_accum.begin(), grad_accum.end(), T(0));
    std::fill(coverage_accum.begin(), coverage_accum.end(), T(0));
    std::fill(max_screen_radius.begin(), max_screen_radius.end(), T(0));
  }

  void normalize_rotations() {
    for (auto &q : rotations)
      q.normalize();
  }

  T opacity(std::size_t i) const { return sigmoid(logit_opacities[i]); }
  Vec3<T> scale(std::size_t i) const {
    return log_scales[i].array().exp().matrix();
  }
};

/// Parameter-space gradients matching GaussianCloud's layout. Quaternion
/// gradients are (w,x,y,z) against the raw stored components, with the
/// unit-normalization chain already applied.
template <typename T> struct CloudGrads {
  std::vector<Vec3<T>> d_positions;
  std::vector<Eigen::Matrix<T, 4, 1>> d_rotations;
  std::vector<Vec3<T>> d_log_scales;
  std::vector<T> d_logit_opacities;
  std::vector<T> d_sh;

  void resize_zero(const GaussianCloud<T> &cloud) {
    d_positions.assign(cloud.size(), Vec3<T>::Zero());
    d_rotations.assign(cloud.size(), Eigen::Matrix<T, 4, 1>::Zero());
    d_log_scales.assign(cloud.size(), Vec3<T>::Zero());
    d_logit_opacities.assign(cloud.size(), T(0));
    d_sh.assign(cloud.sh.size(), T(0));
  }
};

/// 3D covariance from the rotation/scale factorization Sigma = R S S^T R^T.
/// The quaternion is normalized defensively so finite-difference probes of
/// raw components stay consistent with the backward pass.
template <typename T>
Mat3<T> covariance_from(const Quat<T> &rotation, const Vec3<T> &scale) {
  Mat3<T> r = rotation.normalized().toRotationMatrix();
  Mat3<T> m = r * scale.asDiagonal();
  return m * m.transpose();
}

/// d(loss)/d(rotation raw wxyz) and d(loss)/d(scale) given the symmetric
/// gradient d_sigma on covariance_from's output.
template <typename T>
void covariance_from_backward(const Quat<T> &rotation, const Vec3<T> &scale,
                              const Mat3<T> &d_sigma,
                              Eigen::Matrix<T, 4, 1> &d_rot_raw,
                              Vec3<T> &d_scale) {
  const Quat<T> q = rotation.normalized();
  const Mat3<T> r = q.toRotationMatrix();
  const Mat3<T> m = r * scale.asDiagonal();
  const Mat3<T> d_m = T(2) * d_sigma * m;
  const Mat3<T> d_r = d_m * scale.asDiagonal();
  d_scale = (r.transpose() * d_m).diagonal();

  const T w = q.w(), x = q.x(), y = q.y(), z = q.z();
  Mat3<T> dR[4];
  dR[0] << 0, -z, y, z, 0, -x, -y, x, 0;                 // d/dw
  dR[1] << 0, y, z, y, -2 * x, -w, z, w, -2 * x;          // d/dx
  dR[2] << -2 * y, x, w, x, 0, z, -w, z, -2 * y;          // d/dy
  dR[3] << -2 * z, -w, x, w, -2 * z, y, x, y, 0;          // d/dz
  Eigen::Matrix<T, 4, 1> g_unit;
  for (int k = 0; k < 4; ++k)
    g_unit[k] = T(2) * (d_r.array() * dR[k].array()).sum();

  // chain through q_raw -> q_raw/|q_raw|; stored quaternions are unit-norm
  Eigen::Matrix<T, 4, 1> qv(w, x, y, z);
  const T inv_norm = T(1) / rotation.norm();
  d_rot_raw = inv_norm * (g_unit - qv * qv.dot(g_unit));
}

/// Distance and unit direction from the camera center to a point.
template <typename T>
std::pair<T, Vec3<T>> depth_and_dir(const Vec3<T> &position,
                                    const Camera &camera) {
  const Vec3<T> c = camera.center().template cast<T>();
  const Vec3<T> d = position - c;
  const T z = d.norm();
  if (z < T(1e-9))
    fail(ErrorCode::DegenerateDirection,
         "depth_and_dir: point coincides with camera center");
  return {z, d / z};
}

struct ProjectionOptions {
  double znear = 0.01;        // scene units
  double lowpass_eps = 0.3;   // px^2 added to the cov2d diagonal
  double cull_sigma = 3.0;    // frame margin in screen-space sigmas
};

/// A projected Gaussian ready for rasterization. `depth` is the camera-ray
/// distance ||mu - C|| (the z of the medium model and of depth rendering,
/// one definition throughout). Covariance is stored packed symmetric with
/// its inverse precomputed.
template <typename T> struct Splat2D {
  Vec2<T> mean2d;
  T cov_xx, cov_xy, cov_yy; // after the low-pass floor
  T inv_xx, inv_xy, inv_yy;
  T depth;
  Vec3<T> color;
  T opacity; // sigmoid(logit), in (0,1)
  T radius;  // 3 * sqrt(max eigenvalue of cov2d), px
  std::int32_t index = -1; // source index in the cloud
};

/// EWA projection of one Gaussian. Returns nullopt when culled (behind the
/// near plane or outside the frame by more than cull_sigma sigmas). Color is
/// filled by the caller (SH / medium transform happen upstream).
template <typename T>
std::optional<Splat2D<T>>
project(const Vec3<T> &position, const Quat<T> &rotation,
        const Vec3<T> &log_scale, T logit_opacity, const Camera &camera,
        const ProjectionOptions &opts = {}) {
  const Mat3<T> w = camera.rotation_matrix().template cast<T>();
  const Vec3<T> t = camera.translation.template cast<T>();
  const Vec3<T> p_cam = w * position + t;
  if (p_cam.z() <= T(opts.znear))
    return std::nullopt;

  const T fx = T(camera.fx), fy = T(camera.fy);
  const T x = p_cam.x(), y = p_cam.y(), z = p_cam.z();
  const Vec2<T> mean2d(fx * x / z + T(camera.cx), fy * y / z + T(camera.cy));

  Eigen::Matrix<T, 2, 3> jac;
  jac << fx / z, T(0), -fx * x / (z * z), //
      T(0), fy / z, -fy * y / (z * z);
  const Mat3<T> sigma =
      covariance_from(rotation, Vec3<T>(log_scale.array().exp()));
  const Eigen::Matrix<T, 2, 3> tw = jac * w;
  const Mat2<T> cov2d_raw = tw * sigma * tw.transpose();

  Splat2D<T> s;
  s.cov_xx = cov2d_raw(0, 0) + T(opts.lowpass_eps);
  s.cov_xy = cov2d_raw(0, 1);
  s.cov_yy = cov2d_raw(1, 1) + T(opts.lowpass_eps);

  const T det = s.cov_xx * s.cov_yy - s.cov_xy * s.cov_xy;
  if (!(det > T(0)))
    return std::nullopt; // numerically degenerate despite the floor
  const T inv_det = T(1) / det;
  s.inv_xx = s.cov_yy * inv_det;
  s.inv_xy = -s.cov_xy * inv_det;
  s.inv_yy = s.cov_xx * inv_det;

  const T mid = T(0.5) * (s.cov_xx + s.cov_yy);
  const T disc = std::sqrt(std::max(T(0), mid * mid - det));
  s.radius = T(opts.cull_sigma) * std::sqrt(std::max(T(0), mid + disc));

  const T margin = s.radius;
  if (mean2d.x() + margin < T(0) || mean2d.x() - margin > T(camera.width) ||
      mean2d.y() + margin < T(0) || mean2d.y() - margin > T(camera.height))
    return std::nullopt;

  s.mean2d = mean2d;
  s.depth = (position - camera.center().template cast<T>()).norm();
  s.opacity = sigmoid(logit_opacity);
  s.color = Vec3<T>::Zero();
  return s;
}

/// Per-splat gradients produced by the rasterizer backward pass, to be
/// chained into cloud-parameter gradients by project_backward. d_cov2d is
/// packed (xx, xy, yy) with xy treated as a single degree of freedom.
template <typename T> struct SplatGrads {
  Vec2<T> d_mean2d = Vec2<T>::Zero();
  T d_cov_xx = 0, d_cov_xy = 0, d_cov_yy = 0;
  Vec3<T> d_color = Vec3<T>::Zero();
  T d_opacity = 0; // w.r.t. sigmoid(logit)
  T d_depth = 0;   // w.r.t. the camera-ray distance

  void add(const SplatGrads &o) {
    d_mean2d += o.d_mean2d;
    d_cov_xx += o.d_cov_xx;
    d_cov_xy += o.d_cov_xy;
    d_cov_yy += o.d_cov_yy;
    d_color += o.d_color;
    d_opacity += o.d_opacity;
    d_depth += o.d_depth;
  }
};

/// Chains splat-space gradients back to position / rotation / log-scale /
/// logit-opacity for Gaussian `i`, accumulating into `grads`. Recomputes the
/// forward intermediates (cheaper than caching at desk scale).
template <typename T>
void project_backward(const GaussianCloud<T> &cloud, std::size_t i,
                      const Camera &camera, const SplatGrads<T> &g,
                      CloudGrads<T> &grads,
                      const ProjectionOptions &opts = {}) {
  (void)opts;
  const Mat3<T> w = camera.rotation_matrix().template cast<T>();
  const Vec3<T> t = camera.translation.template cast<T>();
  const Vec3<T> p_cam = w * cloud.positions[i] + t;
  const T fx = T(camera.fx), fy = T(camera.fy);
  const T x = p_cam.x(), y = p_cam.y(), z = p_cam.z();
  const T z2 = z * z;

  Vec3<T> d_pcam = Vec3<T>::Zero();

  // mean2d = (fx x / z + cx, fy y / z + cy)
  d_pcam.x() += g.d_mean2d.x() * fx / z;
  d_pcam.y() += g.d_mean2d.y() * fy / z;
  d_pcam.z() += -g.d_mean2d.x() * fx * x / z2 - g.d_mean2d.y() * fy * y / z2;

  // cov2d = (J W) Sigma (J W)^T; unpack the symmetric gradient
  Mat2<T> gc;
  gc << g.d_cov_xx, g.d_cov_xy * T(0.5), g.d_cov_xy * T(0.5), g.d_cov_yy;

  Eigen::Matrix<T, 2, 3> jac;
  jac << fx / z, T(0), -fx * x / z2, //
      T(0), fy / z, -fy * y / z2;
  const Vec3<T> scale = cloud.scale(i);
  const Mat3<T> sigma = covariance_from(cloud.rotations[i], scale);
  const Eigen::Matrix<T, 2, 3> tw = jac * w;

  const Eigen::Matrix<T, 2, 3> d_tw = T(2) * gc * tw * sigma;
  const Mat3<T> d_sigma = tw.transpose() * gc * tw;
  const Eigen::Matrix<T, 2, 3> d_jac = d_tw * w.transpose();

  // J's dependence on camera-space position
  d_pcam.x() += d_jac(0, 2) * (-fx / z2);
  d_pcam.y() += d_jac(1, 2) * (-fy / z2);
  d_pcam.z() += d_jac(0, 0) * (-fx / z2) + d_jac(1, 1) * (-fy / z2) +
                d_jac(0, 2) * (T(2) * fx * x / (z2 * z)) +
                d_jac(1, 2) * (T(2) * fy * y / (z2 * z));

  grads.d_positions[i] += w.transpose() * d_pcam;

  // covariance chain to rotation + log-scale
  Eigen::Matrix<T, 4, 1> d_rot;
  Vec3<T> d_scale;
  covariance_from_backward(cloud.rotations[i], scale, d_sigma, d_rot, d_scale);
  grads.d_rotations[i] += d_rot;
  grads.d_log_scales[i] += (d_scale.array() * scale.array()).matrix();

  // camera-ray depth
  if (g.d_depth != T(0)) {
    const auto [ray_z, dir] = depth_and_dir(cloud.positions[i], camera);
    (void)ray_z;
    grads.d_positions[i] += g.d_depth * dir;
  }

  // opacity sigmoid
  const T alpha = cloud.opacity(i);
  grads.d_logit_opacities[i] += g.d_opacity * alpha * (T(1) - alpha);
}

} // namespace uwsplat
