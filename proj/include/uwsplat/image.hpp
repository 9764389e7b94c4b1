// Copyright Contributors to the uwsplat Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "uwsplat/common.hpp"

#include <cstddef>
#include <vector>

namespace uwsplat {

/// Planar image container, row-major within each channel plane.
/// Values are whatever the producer put there; renders and loaded
/// photographs use [0,1].
template <typename T> class Image {
public:
  Image() = default;
  Image(int height, int width, int channels, T fill = T(0))
      : h_(height), w_(width), c_(channels),
        data_(std::size_t(height) * width * channels, fill) {}

  int height() const { return h_; }
  int width() const { return w_; }
  int channels() const { return c_; }
  std::size_t size() const { return data_.size(); }
  std::size_t pixels() const { return std::size_t(h_) * w_; }

  T &at(int y, int x, int ch = 0) { return data_[plane_ofs(ch) + idx(y, x)]; }
  const T &at(int y, int x, int ch = 0) const {
    return data_[plane_ofs(ch) + idx(y, x)];
  }

  T *plane(int ch) { return data_.data() + plane_ofs(ch); }
  const T *plane(int ch) const { return data_.data() + plane_ofs(ch); }

  std::vector<T> &data() { return data_; }
  const std::vector<T> &data() const { return data_; }

  bool same_shape(const Image &o) const {
    return h_ == o.h_ && w_ == o.w_ && c_ == o.c_;
  }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  template <typename U> Image<U> cast() const {
    Image<U> out(h_, w_, c_);
    for (std::size_t i = 0; i < data_.size(); ++i)
      out.data()[i] = U(data_[i]);
    return out;
  }

private:
  std::size_t idx(int y, int x) const { return std::size_t(y) * w_ + x; }
  std::size_t plane_ofs(int ch) const { return std::size_t(ch) * h_ * w_; }

  int h_ = 0, w_ = 0, c_ = 0;
  std::vector<T> data_;
};

using ImageF = Image<float>;
using ImageD = Image<double>;

/// Binary mask stored as bytes (0/1) for cheap arithmetic.
using Mask = Image<std::uint8_t>;

template <typename T>
void require_same_shape(const Image<T> &a, const Image<T> &b,
                        const char *what) {
  if (!a.same_shape(b))
    fail(ErrorCode::ShapeMismatch, std::string(what) + ": shape mismatch");
}

/// Min-max normalization to [0,1]; a constant image maps to all zeros.
template <typename T> void minmax_normalize(std::vector<T> &v) {
  if (v.empty())
    return;
  T lo = v[0], hi = v[0];
  for (T x : v) {
    lo = std::min(lo, x);
    hi = std::max(hi, x);
  }
  const T range = hi - lo;
  if (range <= T(0)) {
    std::fill(v.begin(), v.end(), T(0));
    return;
  }
  for (T &x : v)
    x = (x - lo) / range;
}

} // namespace uwsplat
