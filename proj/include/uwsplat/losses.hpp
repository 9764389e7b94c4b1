// Copyright Contributors to the uwsplat Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "uwsplat/common.hpp"
#include "uwsplat/image.hpp"
#include "uwsplat/medium.hpp"

#include <array>
#include <optional>

namespace uwsplat {

inline constexpr int kSsimWindow = 11;
inline constexpr double kSsimSigma = 1.5;
inline constexpr double kSsimC1 = 0.01 * 0.01; // on [0,1] dynamic range
inline constexpr double kSsimC2 = 0.03 * 0.03;

struct LossWeights {
  double lambda = 0.8;    // L1 share of the reconstruction mix
  double lambda_d = 0.05; // depth-supervision weight
  double lambda_ca = 0.01; // channel-alignment weight
};

namespace detail {

template <typename T> const std::array<T, kSsimWindow> &ssim_kernel() {
  static const std::array<T, kSsimWindow> k = [] {
    std::array<T, kSsimWindow> w{};
    double sum = 0;
    for (int i = 0; i < kSsimWindow; ++i) {
      const double d = i - kSsimWindow / 2;
      const double v = std::exp(-d * d / (2.0 * kSsimSigma * kSsimSigma));
      w[std::size_t(i)] = T(v);
      sum += v;
    }
    for (auto &v : w)
      v = T(double(v) / sum);
    return w;
  }();
  return k;
}

/// Separable "same"-size convolution with the SSIM Gaussian, zero padding.
/// The kernel is symmetric, so this operator is its own adjoint — the
/// backward pass reuses it directly.
template <typename T> Image<T> conv_ssim(const Image<T> &img) {
  const auto &k = ssim_kernel<T>();
  const int h = img.height(), w = img.width(), c = img.channels();
  const int r = kSsimWindow / 2;
  Image<T> tmp(h, w, c), out(h, w, c);
  for (int ch = 0; ch < c; ++ch) {
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        T acc = T(0);
        for (int i = -r; i <= r; ++i) {
          const int xx = x + i;
          if (xx >= 0 && xx < w)
            acc += k[std::size_t(i + r)] * img.at(y, xx, ch);
        }
        tmp.at(y, x, ch) = acc;
      }
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        T acc = T(0);
        for (int i = -r; i <= r; ++i) {
          const int yy = y + i;
          if (yy >= 0 && yy < h)
            acc += k[std::size_t(i + r)] * tmp.at(yy, x, ch);
        }
        out.at(y, x, ch) = acc;
      }
  }
  return out;
}

template <typename T> Image<T> hadamard(const Image<T> &a, const Image<T> &b) {
  Image<T> out(a.height(), a.width(), a.channels());
  for (std::size_t i = 0; i < a.size(); ++i)
    out.data()[i] = a.data()[i] * b.data()[i];
  return out;
}

} // namespace detail

/// Mean of the per-pixel SSIM map between two images (all channels pooled),
/// optionally restricted to mask!=0 pixels. Gaussian 11x11 window, zero
/// padding, standard stability constants.
template <typename T>
double ssim(const Image<T> &x, const Image<T> &y, const Mask *mask = nullptr) {
  require_same_shape(x, y, "ssim");
  const Image<T> mu_x = detail::conv_ssim(x);
  const Image<T> mu_y = detail::conv_ssim(y);
  const Image<T> xx = detail::conv_ssim(detail::hadamard(x, x));
  const Image<T> yy = detail::conv_ssim(detail::hadamard(y, y));
  const Image<T> xy = detail::conv_ssim(detail::hadamard(x, y));

  double acc = 0;
  std::size_t count = 0;
  for (int ch = 0; ch < x.channels(); ++ch)
    for (int py = 0; py < x.height(); ++py)
      for (int px = 0; px < x.width(); ++px) {
        if (mask && mask->at(py, px) == 0)
          continue;
        const double mx = mu_x.at(py, px, ch), my = mu_y.at(py, px, ch);
        const double sx = xx.at(py, px, ch) - mx * mx;
        const double sy = yy.at(py, px, ch) - my * my;
        const double sxy = xy.at(py, px, ch) - mx * my;
        const double a1 = 2 * mx * my + kSsimC1, a2 = 2 * sxy + kSsimC2;
        const double b1 = mx * mx + my * my + kSsimC1,
                     b2 = sx + sy + kSsimC2;
        acc += (a1 * a2) / (b1 * b2);
        ++count;
      }
  if (count == 0)
    fail(ErrorCode::NoValidPixels, "ssim: mask excluded every pixel");
  return acc / double(count);
}

/// Masked reconstruction loss: lambda * mean(omega*|x-y|) + (1-lambda) *
/// mean(omega * (1-SSIM)/2), means taken over H*W*C with masked pixels
/// contributing zero. Returns the analytic gradient w.r.t. the render x.
template <typename T>
double rec_loss(const Image<T> &x, const Image<T> &y, const Mask &omega,
                double lambda, Image<T> *d_x = nullptr) {
  require_same_shape(x, y, "rec_loss");
  if (omega.size() != 0 &&
      (omega.height() != x.height() || omega.width() != x.width()))
    fail(ErrorCode::ShapeMismatch, "rec_loss: mask shape mismatch");
  const bool masked = omega.size() != 0;
  const int h = x.height(), w = x.width(), c = x.channels();
  const double denom = double(h) * w * c;
  if (d_x) {
    *d_x = Image<T>(h, w, c);
  }

  // L1 term
  double l1 = 0;
  for (int ch = 0; ch < c; ++ch)
    for (int py = 0; py < h; ++py)
      for (int px = 0; px < w; ++px) {
        if (masked && omega.at(py, px) == 0)
          continue;
        const double diff = double(x.at(py, px, ch)) - double(y.at(py, px, ch));
        l1 += std::abs(diff);
        if (d_x && diff != 0)
          d_x->at(py, px, ch) =
              T(lambda * (diff > 0 ? 1.0 : -1.0) / denom);
      }
  l1 /= denom;

  // D-SSIM term with the analytic gradient through the windowed moments
  const Image<T> mu_x = detail::conv_ssim(x);
  const Image<T> mu_y = detail::conv_ssim(y);
  const Image<T> exx = detail::conv_ssim(detail::hadamard(x, x));
  const Image<T> eyy = detail::conv_ssim(detail::hadamard(y, y));
  const Image<T> exy = detail::conv_ssim(detail::hadamard(x, y));

  double dssim = 0;
  Image<T> f_mu, f_vx, f_vxy;
  if (d_x) {
    f_mu = Image<T>(h, w, c);
    f_vx = Image<T>(h, w, c);
    f_vxy = Image<T>(h, w, c);
  }
  for (int ch = 0; ch < c; ++ch)
    for (int py = 0; py < h; ++py)
      for (int px = 0; px < w; ++px) {
        if (masked && omega.at(py, px) == 0)
          continue;
        const double mx = mu_x.at(py, px, ch), my = mu_y.at(py, px, ch);
        const double sx = exx.at(py, px, ch) - mx * mx;
        const double sy = eyy.at(py, px, ch) - my * my;
        const double sxy = exy.at(py, px, ch) - mx * my;
        const double a1 = 2 * mx * my + kSsimC1, a2 = 2 * sxy + kSsimC2;
        const double b1 = mx * mx + my * my + kSsimC1,
                     b2 = sx + sy + kSsimC2;
        const double s = (a1 * a2) / (b1 * b2);
        dssim += (1.0 - s) / 2.0;
        if (!d_x)
          continue;
        // d(loss)/dS at this pixel
        const double w_s = (1.0 - lambda) * (-0.5) / denom;
        const double inv_bb = 1.0 / (b1 * b2);
        const double ds_dmu = 2 * my * a2 * inv_bb - 2 * my * a1 * inv_bb -
                              2 * mx * s / b1 + 2 * mx * s / b2;
        const double ds_dvx = -s / b2;        // E[x^2] channel
        const double ds_dvxy = 2 * a1 * inv_bb; // E[xy] channel
        f_mu.at(py, px, ch) = T(w_s * ds_dmu);
        f_vx.at(py, px, ch) = T(w_s * ds_dvx);
        f_vxy.at(py, px, ch) = T(w_s * ds_dvxy);
      }
  dssim /= denom;

  if (d_x) {
    const Image<T> g_mu = detail::conv_ssim(f_mu);
    const Image<T> g_vx = detail::conv_ssim(f_vx);
    const Image<T> g_vxy = detail::conv_ssim(f_vxy);
    for (int ch = 0; ch < c; ++ch)
      for (int py = 0; py < h; ++py)
        for (int px = 0; px < w; ++px)
          d_x->at(py, px, ch) +=
              g_mu.at(py, px, ch) +
              T(2) * x.at(py, px, ch) * g_vx.at(py, px, ch) +
              y.at(py, px, ch) * g_vxy.at(py, px, ch);
  }
  return lambda * l1 + (1.0 - lambda) * dssim;
}

/// Mean absolute difference of min-max normalized depth maps. The gradient
/// flows through the render's normalization exactly, including the argmin /
/// argmax dependence (first occurrence on ties). Both inputs are normalized
/// here; normalizing an already-normalized map is the identity.
template <typename T>
double depth_loss(const Image<T> &d_hat, const Image<T> &d_ref,
                  Image<T> *d_grad = nullptr) {
  require_same_shape(d_hat, d_ref, "depth_loss");
  const std::size_t n = d_hat.size();
  if (d_grad)
    *d_grad = Image<T>(d_hat.height(), d_hat.width(), 1);

  std::vector<T> ref_n(d_ref.data());
  minmax_normalize(ref_n);

  // normalize d_hat, tracking argmin/argmax
  std::size_t am = 0, aM = 0;
  for (std::size_t i = 1; i < n; ++i) {
    if (d_hat.data()[i] < d_hat.data()[am])
      am = i;
    if (d_hat.data()[i] > d_hat.data()[aM])
      aM = i;
  }
  const double lo = double(d_hat.data()[am]), hi = double(d_hat.data()[aM]);
  const double range = hi - lo;

  double loss = 0;
  if (range <= 0) {
    // constant render normalizes to zero; piecewise-constant region of the
    // normalization, zero subgradient
    for (std::size_t i = 0; i < n; ++i)
      loss += std::abs(0.0 - double(ref_n[i]));
    return loss / double(n);
  }

  double sum_s = 0, sum_s_nhat = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double nhat = (double(d_hat.data()[i]) - lo) / range;
    const double diff = nhat - double(ref_n[i]);
    loss += std::abs(diff);
    const double s = diff > 0 ? 1.0 : (diff < 0 ? -1.0 : 0.0);
    sum_s += s;
    sum_s_nhat += s * nhat;
    if (d_grad)
      d_grad->data()[i] = T(s / (range * double(n)));
  }
  if (d_grad) {
    // d(nhat_p)/d(min) = (nhat_p - 1)/range ; d(nhat_p)/d(max) = -nhat_p/range
    d_grad->data()[am] += T((sum_s_nhat - sum_s) / (range * double(n)));
    d_grad->data()[aM] += T(-sum_s_nhat / (range * double(n)));
  }
  return loss / double(n);
}

/// Channel-wise depth alignment: mean over Gaussians of the six
/// |(-log T)/beta - z| terms (both factors, three channels). Depths are
/// detached targets; gradients land on the medium parameters only.
template <typename T>
double ca_loss(const MediumBatch<T> &params, const VecX<T> &z,
               MediumBatch<T> *d_params = nullptr) {
  const Eigen::Index n = params.t_d.rows();
  if (z.size() != n)
    fail(ErrorCode::SizeMismatch, "ca_loss: depth count mismatch");
  if (n == 0)
    return 0.0;
  if (d_params)
    d_params->set_zero(n);

  double loss = 0;
  auto term = [&](const MatX<T> &t, const MatX<T> &beta, MatX<T> *d_t,
                  MatX<T> *d_beta) {
    for (Eigen::Index i = 0; i < n; ++i)
      for (int ch = 0; ch < 3; ++ch) {
        const double tv = double(t(i, ch));
        const double bv = std::max(double(beta(i, ch)), kBetaFloor);
        const double zh = -std::log(tv) / bv;
        const double diff = zh - double(z[i]);
        loss += std::abs(diff);
        if (!d_params)
          continue;
        const double s =
            (diff > 0 ? 1.0 : (diff < 0 ? -1.0 : 0.0)) / double(n);
        (*d_t)(i, ch) += T(s * (-1.0 / (tv * bv)));
        if (double(beta(i, ch)) > kBetaFloor)
          (*d_beta)(i, ch) += T(s * (std::log(tv) / (bv * bv)));
      }
  };
  term(params.t_d, params.beta_d, d_params ? &d_params->t_d : nullptr,
       d_params ? &d_params->beta_d : nullptr);
  term(params.t_b, params.beta_b, d_params ? &d_params->t_b : nullptr,
       d_params ? &d_params->beta_b : nullptr);
  return loss / double(n);
}

/// Gray-world prior on the estimated clean image: sum over channels of the
/// squared deviation of the channel mean from mid-gray.
template <typename T>
double gray_world_loss(const Image<T> &j, Image<T> *d_j = nullptr) {
  const int h = j.height(), w = j.width();
  const double npx = double(h) * w;
  if (d_j)
    *d_j = Image<T>(h, w, j.channels());
  double loss = 0;
  for (int ch = 0; ch < j.channels(); ++ch) {
    double mean = 0;
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        mean += double(j.at(y, x, ch));
    mean /= npx;
    const double dev = mean - 0.5;
    loss += dev * dev;
    if (d_j) {
      const T g = T(2.0 * dev / npx);
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
          d_j->at(y, x, ch) = g;
    }
  }
  return loss;
}

enum class TrainPhase { Warmup, Main };

/// Scalar total. The warm-up phase trains through the depth terms only;
/// the main phase adds reconstruction and the gray-world prior.
inline double total_loss(double rec, double depth, double ca, double gray,
                         const LossWeights &w, TrainPhase phase) {
  const double da = w.lambda_d * depth + w.lambda_ca * ca;
  if (phase == TrainPhase::Warmup)
    return da;
  return rec + da + gray;
}

} // namespace uwsplat
