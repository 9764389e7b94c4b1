// Copyright Contributors to the uwsplat Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "uwsplat/common.hpp"
#include "uwsplat/gaussian.hpp"
#include "uwsplat/image.hpp"

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <vector>

namespace uwsplat {

inline constexpr int kTileSize = 16;
inline constexpr double kAlphaClamp = 0.99;
inline constexpr double kMinAlpha = 1.0 / 255.0;
inline constexpr double kTransmittanceFloor = 1e-4;
inline constexpr double kCoverageMinWeight = 1e-4; // blend weight for "covered"

template <typename T> struct RenderOutput {
  Image<T> color; // H x W x 3, premultiplied blend + bg * residual transmittance
  Image<T> depth; // H x W x 1, alpha-weighted camera-ray distance
  Image<T> alpha; // H x W x 1, 1 - final transmittance
};

/// Forward state retained for the backward pass and for density statistics.
template <typename T> struct RasterScratch {
  int width = 0, height = 0;
  int tiles_x = 0, tiles_y = 0;
  std::vector<int> order;                  // splat indices sorted front-to-back
  std::vector<std::vector<int>> tile_lists; // per tile: positions into `order`
  Image<std::int32_t> n_contrib;           // blended entries per pixel
  Image<T> final_t;                        // residual transmittance per pixel
  std::vector<std::int64_t> covered_px;    // per input splat: blended pixel count
};

/// Gradients of the render outputs with respect to each output image.
/// Any of the planes may be empty (zero upstream gradient).
template <typename T> struct RenderGrads {
  const Image<T> *d_color = nullptr;
  const Image<T> *d_depth = nullptr;
  const Image<T> *d_alpha = nullptr;
};

namespace detail {

template <typename T>
void tile_span(const Splat2D<T> &s, int tiles_x, int tiles_y, int width,
               int height, int &tx0, int &tx1, int &ty0, int &ty1) {
  const T r = s.radius;
  tx0 = std::max(0, int(std::floor((s.mean2d.x() - r) / kTileSize)));
  ty0 = std::max(0, int(std::floor((s.mean2d.y() - r) / kTileSize)));
  tx1 = std::min(tiles_x - 1, int(std::floor((s.mean2d.x() + r) / kTileSize)));
  ty1 = std::min(tiles_y - 1, int(std::floor((s.mean2d.y() + r) / kTileSize)));
  (void)width;
  (void)height;
}

} // namespace detail

/// Sorts splats front-to-back and builds the per-tile work lists.
template <typename T>
void build_tile_lists(const std::vector<Splat2D<T>> &splats, int width,
                      int height, RasterScratch<T> &scratch) {
  scratch.width = width;
  scratch.height = height;
  scratch.tiles_x = (width + kTileSize - 1) / kTileSize;
  scratch.tiles_y = (height + kTileSize - 1) / kTileSize;

  scratch.order.resize(splats.size());
  std::iota(scratch.order.begin(), scratch.order.end(), 0);
  std::sort(scratch.order.begin(), scratch.order.end(), [&](int a, int b) {
    if (splats[a].depth != splats[b].depth)
      return splats[a].depth < splats[b].depth;
    return splats[a].index < splats[b].index;
  });

  scratch.tile_lists.assign(std::size_t(scratch.tiles_x) * scratch.tiles_y, {});
  for (int rank = 0; rank < int(scratch.order.size()); ++rank) {
    const Splat2D<T> &s = splats[std::size_t(scratch.order[std::size_t(rank)])];
    int tx0, tx1, ty0, ty1;
    detail::tile_span(s, scratch.tiles_x, scratch.tiles_y, width, height, tx0,
                      tx1, ty0, ty1);
    for (int ty = ty0; ty <= ty1; ++ty)
      for (int tx = tx0; tx <= tx1; ++tx)
        scratch.tile_lists[std::size_t(ty) * scratch.tiles_x + tx].push_back(
            rank);
  }
}

/// Front-to-back alpha blending of depth-sorted splats over a solid
/// background color. Accumulation runs in double; outputs are stored at the
/// working precision T.
template <typename T>
RenderOutput<T> rasterize(const std::vector<Splat2D<T>> &splats, int width,
                          int height, const Vec3<T> &background,
                          RasterScratch<T> *scratch_out = nullptr,
                          int threads = 1) {
  RasterScratch<T> local;
  RasterScratch<T> &scratch = scratch_out ? *scratch_out : local;
  build_tile_lists(splats, width, height, scratch);

  RenderOutput<T> out;
  out.color = Image<T>(height, width, 3);
  out.depth = Image<T>(height, width, 1);
  out.alpha = Image<T>(height, width, 1);
  scratch.n_contrib = Image<std::int32_t>(height, width, 1);
  scratch.final_t = Image<T>(height, width, 1);
  scratch.covered_px.assign(splats.size(), 0);

  const int n_tiles = scratch.tiles_x * scratch.tiles_y;
  std::vector<std::vector<std::int64_t>> covered_parts;

  auto run_tiles = [&](std::size_t tile_begin, std::size_t tile_end,
                       std::vector<std::int64_t> &covered) {
    for (std::size_t tile = tile_begin; tile < tile_end; ++tile) {
      const int tx = tile % scratch.tiles_x;
      const int ty = tile / scratch.tiles_x;
      const auto &list = scratch.tile_lists[std::size_t(tile)];
      const int y0 = ty * kTileSize, y1 = std::min(height, y0 + kTileSize);
      const int x0 = tx * kTileSize, x1 = std::min(width, x0 + kTileSize);
      for (int y = y0; y < y1; ++y) {
        for (int x = x0; x < x1; ++x) {
          const T px = T(x) + T(0.5), py = T(y) + T(0.5);
          double acc_c[3] = {0, 0, 0};
          double acc_d = 0;
          double trans = 1.0;
          std::int32_t last_pos = 0; // 1 past the last blended list position
          for (int li = 0; li < int(list.size()); ++li) {
            const Splat2D<T> &s =
                splats[std::size_t(scratch.order[std::size_t(list[std::size_t(li)])])];
            const T dx = px - s.mean2d.x();
            const T dy = py - s.mean2d.y();
            const T m = s.inv_xx * dx * dx + T(2) * s.inv_xy * dx * dy +
                        s.inv_yy * dy * dy;
            if (m < T(0))
              continue; // numerically indefinite conic; no contribution
            const T g = std::exp(T(-0.5) * m);
            const T a = std::min(T(kAlphaClamp), s.opacity * g);
            if (a < T(kMinAlpha))
              continue;
            last_pos = li + 1;
            const double w = double(a) * trans;
            if (w > kCoverageMinWeight)
              covered[std::size_t(scratch.order[std::size_t(list[std::size_t(li)])])]++;
            acc_c[0] += w * double(s.color[0]);
            acc_c[1] += w * double(s.color[1]);
            acc_c[2] += w * double(s.color[2]);
            acc_d += w * double(s.depth);
            trans *= 1.0 - double(a);
            if (trans < kTransmittanceFloor)
              break;
          }
          // the backward pass replays the same walk over list positions
          // [0, last_pos) with identical acceptance tests
          scratch.n_contrib.at(y, x) = last_pos;
          scratch.final_t.at(y, x) = T(trans);
          out.color.at(y, x, 0) = T(acc_c[0] + trans * double(background[0]));
          out.color.at(y, x, 1) = T(acc_c[1] + trans * double(background[1]));
          out.color.at(y, x, 2) = T(acc_c[2] + trans * double(background[2]));
          out.depth.at(y, x) = T(acc_d);
          out.alpha.at(y, x) = T(1.0 - trans);
        }
      }
    }
  };

  if (threads <= 1) {
    run_tiles(std::size_t(0), std::size_t(n_tiles), scratch.covered_px);
  } else {
    covered_parts.assign(std::size_t(threads),
                         std::vector<std::int64_t>(splats.size(), 0));
    parallel_chunks(std::size_t(n_tiles), threads, [&](std::size_t begin, std::size_t end, int t) {
      run_tiles(begin, end, covered_parts[std::size_t(t)]);
    });
    for (const auto &part : covered_parts)
      for (std::size_t i = 0; i < splats.size(); ++i)
        scratch.covered_px[i] += part[i];
  }
  return out;
}

/// Reverse-mode blending: replays each pixel's walk using the retained
/// contribution counts, walking back-to-front with suffix accumulators.
/// The background enters the color suffix as a final opaque layer.
/// Returns per-splat gradients aligned with the input splat vector.
template <typename T>
std::vector<SplatGrads<T>>
rasterize_backward(const std::vector<Splat2D<T>> &splats,
                   const RasterScratch<T> &scratch, const RenderGrads<T> &up,
                   const Vec3<T> &background, int threads = 1) {
  std::vector<SplatGrads<T>> grads(splats.size());

  auto run_tiles = [&](std::size_t tile_begin, std::size_t tile_end,
                       std::vector<SplatGrads<T>> &g_out) {
    for (std::size_t tile = tile_begin; tile < tile_end; ++tile) {
      const int tx = tile % scratch.tiles_x;
      const int ty = tile / scratch.tiles_x;
      const auto &list = scratch.tile_lists[std::size_t(tile)];
      const int y0 = ty * kTileSize,
                y1 = std::min(scratch.height, y0 + kTileSize);
      const int x0 = tx * kTileSize,
                x1 = std::min(scratch.width, x0 + kTileSize);
      for (int y = y0; y < y1; ++y) {
        for (int x = x0; x < x1; ++x) {
          const std::int32_t last_pos = scratch.n_contrib.at(y, x);
          if (last_pos == 0)
            continue; // nothing blended: only the detached background shows

          double g_c[3] = {0, 0, 0};
          if (up.d_color)
            for (int ch = 0; ch < 3; ++ch)
              g_c[ch] = double(up.d_color->at(y, x, ch));
          const double g_d = up.d_depth ? double(up.d_depth->at(y, x)) : 0.0;
          const double g_a = up.d_alpha ? double(up.d_alpha->at(y, x)) : 0.0;
          if (g_c[0] == 0 && g_c[1] == 0 && g_c[2] == 0 && g_d == 0 &&
              g_a == 0)
            continue;

          const T px = T(x) + T(0.5), py = T(y) + T(0.5);
          double trans = double(scratch.final_t.at(y, x));
          // suffix sums over layers behind the current one; the background
          // behaves as a final splat with alpha = 1
          double s_c[3] = {trans * double(background[0]),
                           trans * double(background[1]),
                           trans * double(background[2])};
          double s_d = 0.0;
          double s_a = 0.0;

          for (int li = last_pos - 1; li >= 0; --li) {
            const int idx = scratch.order[std::size_t(list[std::size_t(li)])];
            const Splat2D<T> &s = splats[std::size_t(idx)];
            const T dx = px - s.mean2d.x();
            const T dy = py - s.mean2d.y();
            const T m = s.inv_xx * dx * dx + T(2) * s.inv_xy * dx * dy +
                        s.inv_yy * dy * dy;
            if (m < T(0))
              continue;
            const T g = std::exp(T(-0.5) * m);
            const T a_raw = s.opacity * g;
            const T a = std::min(T(kAlphaClamp), a_raw);
            if (a < T(kMinAlpha))
              continue;

            trans /= 1.0 - double(a); // transmittance in front of this splat
            const double w = double(a) * trans;

            SplatGrads<T> &gr = g_out[std::size_t(idx)];
            double d_alpha = 0.0;
            for (int ch = 0; ch < 3; ++ch) {
              gr.d_color[ch] += T(g_c[ch] * w);
              d_alpha +=
                  g_c[ch] * (double(s.color[ch]) * trans -
                             s_c[ch] / (1.0 - double(a)));
            }
            gr.d_depth += T(g_d * w);
            d_alpha +=
                g_d * (double(s.depth) * trans - s_d / (1.0 - double(a)));
            d_alpha += g_a * (trans - s_a / (1.0 - double(a)));

            for (int ch = 0; ch < 3; ++ch)
              s_c[ch] += w * double(s.color[ch]);
            s_d += w * double(s.depth);
            s_a += w;

            if (a_raw < T(kAlphaClamp)) { // clamped alpha blocks the chain
              const double d_g = d_alpha * double(s.opacity);
              gr.d_opacity += T(d_alpha * double(g));
              const double d_m = -0.5 * d_g * double(g);
              // m = d^T L d with L the stored inverse covariance
              const double ldx =
                  double(s.inv_xx) * double(dx) + double(s.inv_xy) * double(dy);
              const double ldy =
                  double(s.inv_xy) * double(dx) + double(s.inv_yy) * double(dy);
              gr.d_mean2d.x() += T(-2.0 * d_m * ldx);
              gr.d_mean2d.y() += T(-2.0 * d_m * ldy);
              // dm/dL = d d^T, then L -> cov: dCov = -L (d d^T) L * d_m
              const double c_xx = -d_m * ldx * ldx;
              const double c_xy = -d_m * ldx * ldy;
              const double c_yy = -d_m * ldy * ldy;
              gr.d_cov_xx += T(c_xx);
              gr.d_cov_xy += T(2.0 * c_xy); // single off-diagonal DOF
              gr.d_cov_yy += T(c_yy);
            }
          }
        }
      }
    }
  };

  const int n_tiles = scratch.tiles_x * scratch.tiles_y;
  if (threads <= 1) {
    run_tiles(std::size_t(0), std::size_t(n_tiles), grads);
  } else {
    std::vector<std::vector<SplatGrads<T>>> parts(
        std::size_t(threads), std::vector<SplatGrads<T>>(splats.size()));
    parallel_chunks(std::size_t(n_tiles), threads, [&](std::size_t begin, std::size_t end, int t) {
      run_tiles(begin, end, parts[std::size_t(t)]);
    });
    for (const auto &part : parts)
      for (std::size_t i = 0; i < splats.size(); ++i)
        grads[i].add(part[i]);
  }
  return grads;
}

/// Per-splat densification inputs: pixels covered this view and the
/// screen-space position gradient magnitude.
template <typename T> struct CoverageStat {
  std::int64_t covered_px = 0;
  T grad_norm = T(0);
};

template <typename T>
std::vector<CoverageStat<T>>
coverage_stats(const RasterScratch<T> &scratch,
               const std::vector<SplatGrads<T>> &grads) {
  std::vector<CoverageStat<T>> stats(grads.size());
  for (std::size_t i = 0; i < grads.size(); ++i) {
    stats[i].covered_px = scratch.covered_px[i];
    stats[i].grad_norm = grads[i].d_mean2d.norm();
  }
  return stats;
}

} // namespace uwsplat
