// Copyright Contributors to the uwsplat Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "uwsplat/losses.hpp"

namespace uwsplat {

inline constexpr double kPsnrCap = 99.0;

/// Peak signal-to-noise ratio on [0,1] images, optionally over mask!=0
/// pixels only. Identical images report the cap.
template <typename T>
double psnr(const Image<T> &x, const Image<T> &y, const Mask *mask = nullptr) {
  require_same_shape(x, y, "psnr");
  double mse = 0;
  std::size_t count = 0;
  for (int ch = 0; ch < x.channels(); ++ch)
    for (int py = 0; py < x.height(); ++py)
      for (int px = 0; px < x.width(); ++px) {
        if (mask && mask->at(py, px) == 0)
          continue;
        const double d = double(x.at(py, px, ch)) - double(y.at(py, px, ch));
        mse += d * d;
        ++count;
      }
  if (count == 0)
    fail(ErrorCode::NoValidPixels, "psnr: mask excluded every pixel");
  mse /= double(count);
  if (mse <= 0)
    return kPsnrCap;
  return std::min(kPsnrCap, -10.0 * std::log10(mse));
}

struct Metrics {
  double psnr = 0;
  double ssim = 0;
};

template <typename T>
Metrics compute_metrics(const Image<T> &x, const Image<T> &y,
                        const Mask *mask = nullptr) {
  return {psnr(x, y, mask), ssim(x, y, mask)};
}

} // namespace uwsplat
