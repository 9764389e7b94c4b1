// Copyright Contributors to the uwsplat Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace uwsplat {

template <typename T> using Vec2 = Eigen::Matrix<T, 2, 1>;
template <typename T> using Vec3 = Eigen::Matrix<T, 3, 1>;
template <typename T> using Mat2 = Eigen::Matrix<T, 2, 2>;
template <typename T> using Mat3 = Eigen::Matrix<T, 3, 3>;
template <typename T> using Quat = Eigen::Quaternion<T>;
template <typename T>
using MatX = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;
template <typename T> using VecX = Eigen::Matrix<T, Eigen::Dynamic, 1>;

enum class ErrorCode {
  MissingFile,
  UnreadableFile,
  MalformedLine,
  UnsupportedCameraModel,
  MissingInitialPoints,
  SizeMismatch,
  ShapeMismatch,
  IoError,
  VersionMismatch,
  DegreeOutOfRange,
  DegenerateDirection,
  NonFiniteActivation,
  InsufficientDepthVariation,
  CloudEmptyAfterPrune,
  DivergedLoss,
  NoValidPixels,
  ConfigError,
};

/// Single exception type carrying a machine-checkable code; tests assert on
/// the code, messages are for humans.
class Error : public std::runtime_error {
public:
  Error(ErrorCode code, std::string msg)
      : std::runtime_error(std::move(msg)), code_(code) {}
  ErrorCode code() const noexcept { return code_; }

private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string &msg) {
  throw Error(code, msg);
}

template <typename T> inline T sigmoid(T x) {
  return T(1) / (T(1) + std::exp(-x));
}

template <typename T> inline T inverse_sigmoid(T y) {
  return std::log(y / (T(1) - y));
}

template <typename T> inline T softplus(T x) {
  // log1p(exp(x)) with the usual overflow guard
  return x > T(20) ? x : std::log1p(std::exp(x));
}

/// FNV-1a, used for config digests persisted in checkpoints.
inline std::uint64_t fnv1a64(const std::string &data) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : data) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

/// Static-partition parallel map over [0, n). Chunks are contiguous and the
/// assignment depends only on (n, threads), so any per-chunk buffers can be
/// merged in chunk order for results that are bitwise stable for a given
/// thread count. threads <= 1 runs inline.
template <typename Fn>
void parallel_chunks(std::size_t n, int threads, Fn &&fn) {
  if (n == 0)
    return;
  if (threads <= 1) {
    fn(std::size_t(0), n, 0);
    return;
  }
  const std::size_t nt = std::min<std::size_t>(threads, n);
  const std::size_t chunk = (n + nt - 1) / nt;
  std::vector<std::thread> pool;
  pool.reserve(nt);
  for (std::size_t t = 0; t < nt; ++t) {
    const std::size_t begin = t * chunk;
    const std::size_t end = std::min(n, begin + chunk);
    if (begin >= end)
      break;
    pool.emplace_back([&fn, begin, end, t] { fn(begin, end, int(t)); });
  }
  for (auto &th : pool)
    th.join();
}

} // namespace uwsplat
