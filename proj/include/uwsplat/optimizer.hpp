// Copyright Contributors to the uwsplat Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "uwsplat/common.hpp"
#include "uwsplat/gaussian.hpp"
#include "uwsplat/medium.hpp"

#include <cmath>
#include <cstring>
#include <vector>

namespace uwsplat {

namespace detail {

/// In-place Adam update over a flat span; bias correction from `step`.
template <typename T>
void adam_update(T *p, const T *g, T *m, T *v, std::size_t n, T lr, T beta1,
                 T beta2, T eps, std::int64_t step) {
  const T c1 = T(1) - std::pow(beta1, T(step));
  const T c2 = T(1) - std::pow(beta2, T(step));
  for (std::size_t i = 0; i < n; ++i) {
    m[i] = beta1 * m[i] + (T(1) - beta1) * g[i];
    v[i] = beta2 * v[i] + (T(1) - beta2) * g[i] * g[i];
    const T mhat = m[i] / c1;
    const T vhat = v[i] / c2;
    p[i] -= lr * mhat / (std::sqrt(vhat) + eps);
  }
}

} // namespace detail

/// Per-attribute learning rates (3DGS defaults).  The position rate is
/// multiplied by the scene radius and decays exponentially from `position`
/// to `position_final` over `decay_steps`.
struct CloudLearningRates {
  double position = 1.6e-4;
  double position_final = 1.6e-6;
  double rotation = 1e-3;
  double scale = 5e-3;
  double opacity = 0.05;
  double sh_dc = 2.5e-3;
  double sh_rest = 2.5e-3 / 20.0;

  void validate() const {
    for (double r : {position, position_final, rotation, scale, opacity, sh_dc,
                     sh_rest})
      if (!(r > 0))
        fail(ErrorCode::ConfigError, "optimizer: learning rates must be > 0");
  }
};

/// Adam over the Gaussian cloud, one moment pair per attribute group.
/// Supports moment remapping across densification events.
template <typename T> class CloudOptimizer {
public:
  CloudOptimizer(const GaussianCloud<T> &cloud, CloudLearningRates rates,
                 T scene_radius, std::int64_t decay_steps)
      : rates_(rates), scene_radius_(scene_radius), decay_steps_(decay_steps) {
    rates_.validate();
    if (!(scene_radius > 0))
      fail(ErrorCode::ConfigError, "optimizer: scene radius must be > 0");
    resize(cloud.size(), cloud.sh_stride());
  }

  T position_lr(std::int64_t step) const {
    const double t =
        std::clamp(double(step) / double(std::max<std::int64_t>(decay_steps_, 1)),
                   0.0, 1.0);
    const double lr = rates_.position *
                      std::pow(rates_.position_final / rates_.position, t);
    return T(lr * scene_radius_);
  }

  void step(GaussianCloud<T> &cloud, const CloudGrads<T> &grads) {
    ++step_;
    const std::size_t n = cloud.size();
    const int stride = cloud.sh_stride();
    auto upd = [&](T *p, const T *g, std::vector<T> &m, std::vector<T> &v,
                   std::size_t len, T lr) {
      detail::adam_update(p, g, m.data(), v.data(), len, lr, T(kBeta1),
                          T(kBeta2), T(kEps), step_);
    };
    upd(cloud.positions[0].data(), grads.d_positions[0].data(), m_pos_, v_pos_,
        3 * n, position_lr(step_));
    // rotation gradients are (w,x,y,z); Eigen stores coeffs as (x,y,z,w)
    for (std::size_t i = 0; i < n; ++i) {
      Quat<T> &q = cloud.rotations[i];
      T p[4] = {q.w(), q.x(), q.y(), q.z()};
      detail::adam_update(p, grads.d_rotations[i].data(), m_rot_.data() + 4 * i,
                          v_rot_.data() + 4 * i, std::size_t(4),
                          T(rates_.rotation), T(kBeta1), T(kBeta2), T(kEps),
                          step_);
      q = Quat<T>(p[0], p[1], p[2], p[3]);
    }
    upd(cloud.log_scales[0].data(), grads.d_log_scales[0].data(), m_scale_,
        v_scale_, 3 * n, T(rates_.scale));
    upd(cloud.logit_opacities.data(), grads.d_logit_opacities.data(), m_op_,
        v_op_, n, T(rates_.opacity));
    // SH: the DC triple and the rest of each stride learn at different rates
    for (std::size_t i = 0; i < n; ++i) {
      T *p = cloud.sh.data() + i * stride;
      const T *g = grads.d_sh.data() + i * stride;
      T *m = m_sh_.data() + i * stride;
      T *v = v_sh_.data() + i * stride;
      detail::adam_update(p, g, m, v, std::size_t(3), T(rates_.sh_dc),
                          T(kBeta1), T(kBeta2), T(kEps), step_);
      if (stride > 3)
        detail::adam_update(p + 3, g + 3, m + 3, v + 3, std::size_t(stride - 3),
                            T(rates_.sh_rest), T(kBeta1), T(kBeta2), T(kEps),
                            step_);
    }
  }

  /// Rebuilds moment buffers after densify/prune: survivors keep their
  /// state, new Gaussians start from zero.
  void remap(const std::vector<std::ptrdiff_t> &source, int sh_stride) {
    auto take = [&](std::vector<T> &m, std::vector<T> &v, std::size_t width) {
      std::vector<T> nm(source.size() * width, T(0));
      std::vector<T> nv(source.size() * width, T(0));
      for (std::size_t i = 0; i < source.size(); ++i)
        if (source[i] >= 0) {
          const std::size_t s = std::size_t(source[i]);
          std::memcpy(nm.data() + i * width, m.data() + s * width,
                      width * sizeof(T));
          std::memcpy(nv.data() + i * width, v.data() + s * width,
                      width * sizeof(T));
        }
      m = std::move(nm);
      v = std::move(nv);
    };
    take(m_pos_, v_pos_, 3);
    take(m_rot_, v_rot_, 4);
    take(m_scale_, v_scale_, 3);
    take(m_op_, v_op_, 1);
    take(m_sh_, v_sh_, std::size_t(sh_stride));
  }

  std::int64_t steps_taken() const { return step_; }
  const std::vector<T> &position_moment1() const { return m_pos_; }

  static constexpr double kBeta1 = 0.9, kBeta2 = 0.999, kEps = 1e-15;

private:
  void resize(std::size_t n, int stride) {
    m_pos_.assign(3 * n, T(0));
    v_pos_.assign(3 * n, T(0));
    m_rot_.assign(4 * n, T(0));
    v_rot_.assign(4 * n, T(0));
    m_scale_.assign(3 * n, T(0));
    v_scale_.assign(3 * n, T(0));
    m_op_.assign(n, T(0));
    v_op_.assign(n, T(0));
    m_sh_.assign(n * std::size_t(stride), T(0));
    v_sh_.assign(n * std::size_t(stride), T(0));
  }

  CloudLearningRates rates_;
  T scene_radius_;
  std::int64_t decay_steps_;
  std::int64_t step_ = 0;
  std::vector<T> m_pos_, v_pos_, m_rot_, v_rot_, m_scale_, v_scale_, m_op_,
      v_op_, m_sh_, v_sh_;
};

/// Independent Adam for the medium MLP (single rate, standard epsilon).
template <typename T> class MediumOptimizer {
public:
  explicit MediumOptimizer(const MediumNet<T> &net, double lr = 1e-3)
      : lr_(lr) {
    if (!(lr > 0))
      fail(ErrorCode::ConfigError, "optimizer: MLP rate must be > 0");
    for (auto span : params_of(const_cast<MediumNet<T> &>(net))) {
      m_.emplace_back(span.second, T(0));
      v_.emplace_back(span.second, T(0));
    }
  }

  void step(MediumNet<T> &net, MediumNetGrads<T> &grads) {
    ++step_;
    auto ps = params_of(net);
    auto gs = grads_of(grads);
    for (std::size_t k = 0; k < ps.size(); ++k)
      detail::adam_update(ps[k].first, gs[k].first, m_[k].data(),
                          v_[k].data(), ps[k].second, T(lr_), T(0.9), T(0.999),
                          T(kEps), step_);
  }

  std::int64_t steps_taken() const { return step_; }

  static constexpr double kEps = 1e-8;

private:
  using Span = std::pair<T *, std::size_t>;

  static std::vector<Span> params_of(MediumNet<T> &net) {
    std::vector<Span> out{{net.w1.data(), std::size_t(net.w1.size())},
                          {net.b1.data(), std::size_t(net.b1.size())},
                          {net.w2.data(), std::size_t(net.w2.size())},
                          {net.b2.data(), std::size_t(net.b2.size())}};
    for (int h = 0; h < 5; ++h) {
      out.push_back({net.head_w[h].data(), std::size_t(net.head_w[h].size())});
      out.push_back({net.head_b[h].data(), std::size_t(net.head_b[h].size())});
    }
    return out;
  }
  static std::vector<Span> grads_of(MediumNetGrads<T> &g) {
    std::vector<Span> out{{g.w1.data(), std::size_t(g.w1.size())},
                          {g.b1.data(), std::size_t(g.b1.size())},
                          {g.w2.data(), std::size_t(g.w2.size())},
                          {g.b2.data(), std::size_t(g.b2.size())}};
    for (int h = 0; h < 5; ++h) {
      out.push_back({g.head_w[h].data(), std::size_t(g.head_w[h].size())});
      out.push_back({g.head_b[h].data(), std::size_t(g.head_b[h].size())});
    }
    return out;
  }

  double lr_;
  std::int64_t step_ = 0;
  std::vector<std::vector<T>> m_, v_;
};

} // namespace uwsplat
