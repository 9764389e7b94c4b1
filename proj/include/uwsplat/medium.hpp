// Copyright Contributors to the uwsplat Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "uwsplat/common.hpp"

#include <array>
#include <random>
#include <vector>

namespace uwsplat {

/// Per-Gaussian water parameters. Ranges are enforced by the head
/// activations: sigmoid for t_d/t_b/b, softplus for beta_d/beta_b.
template <typename T> struct MediumParams {
  Vec3<T> t_d;    // attenuation factor, (0,1)^3
  Vec3<T> t_b;    // backscatter factor, (0,1)^3
  Vec3<T> beta_d; // attenuation coefficient, >= 0, 1/scene-unit
  Vec3<T> beta_b; // backscatter coefficient, >= 0
  Vec3<T> b;      // backscatter light color, (0,1)^3
};

/// Frequency encoding [sin(2^k pi x), cos(2^k pi x)], k = 0..num_freqs-1,
/// written per input component in that order. Output width 2*num_freqs per
/// component.
template <typename T> void pos_encode(T x, int num_freqs, T *out) {
  T freq = T(M_PI);
  for (int k = 0; k < num_freqs; ++k) {
    out[2 * k] = std::sin(freq * x);
    out[2 * k + 1] = std::cos(freq * x);
    freq *= T(2);
  }
}

template <typename T>
void pos_encode(const Vec3<T> &v, int num_freqs, T *out) {
  for (int c = 0; c < 3; ++c)
    pos_encode(v[c], num_freqs, out + 2 * num_freqs * c);
}

/// Affine color transform of the appearance model:
/// c_m = t_d * c + (1 - t_b) * b, channel-wise. No clamping here; images are
/// clamped only at the final write-out stage.
template <typename T>
Vec3<T> transform_color(const Vec3<T> &c, const MediumParams<T> &p) {
  return (p.t_d.array() * c.array() +
          (T(1) - p.t_b.array()) * p.b.array())
      .matrix();
}

inline constexpr double kBetaFloor = 1e-4;

/// Depths implied by each (factor, coefficient) pair:
/// z_hat = -log(t) / max(beta, floor), for channels r,g,b and both the
/// direct and backscatter pairs. Row 0 = direct, row 1 = backscatter.
template <typename T>
std::array<Vec3<T>, 2> implied_depth(const MediumParams<T> &p) {
  std::array<Vec3<T>, 2> z;
  for (int ch = 0; ch < 3; ++ch) {
    z[0][ch] = -std::log(p.t_d[ch]) / std::max(p.beta_d[ch], T(kBetaFloor));
    z[1][ch] = -std::log(p.t_b[ch]) / std::max(p.beta_b[ch], T(kBetaFloor));
  }
  return z;
}

/// Batched medium parameters, one row per Gaussian.
template <typename T> struct MediumBatch {
  MatX<T> t_d, t_b, beta_d, beta_b, b; // each N x 3

  void resize(Eigen::Index n) {
    t_d.resize(n, 3);
    t_b.resize(n, 3);
    beta_d.resize(n, 3);
    beta_b.resize(n, 3);
    b.resize(n, 3);
  }
  void set_zero(Eigen::Index n) {
    t_d = MatX<T>::Zero(n, 3);
    t_b = MatX<T>::Zero(n, 3);
    beta_d = MatX<T>::Zero(n, 3);
    beta_b = MatX<T>::Zero(n, 3);
    b = MatX<T>::Zero(n, 3);
  }

  MediumParams<T> row(Eigen::Index i) const {
    return {t_d.row(i).transpose(), t_b.row(i).transpose(),
            beta_d.row(i).transpose(), beta_b.row(i).transpose(),
            b.row(i).transpose()};
  }
};

template <typename T> struct MediumNetGrads;

/// The medium MLP f(enc(z), enc(dir)): a 2-layer ReLU backbone and five
/// linear heads (t_d, t_b, beta_d, beta_b, b), three outputs each.
/// Depths must be normalized (z / scene radius) before encoding.
template <typename T> struct MediumNet {
  int z_freqs = 4;
  int dir_freqs = 4;
  int hidden = 64;

  MatX<T> w1, w2;                  // hidden x in, hidden x hidden
  VecX<T> b1, b2;                  // hidden
  std::array<MatX<T>, 5> head_w;   // 3 x hidden, order: t_d,t_b,beta_d,beta_b,b
  std::array<VecX<T>, 5> head_b;   // 3

  int input_width() const { return 2 * z_freqs + 6 * dir_freqs; }

  std::size_t parameter_count() const {
    std::size_t n = std::size_t(w1.size()) + b1.size() + w2.size() + b2.size();
    for (int h = 0; h < 5; ++h)
      n += std::size_t(head_w[h].size()) + head_b[h].size();
    return n;
  }

  void init(std::uint64_t seed, int hidden_width = 64, int freqs_z = 4,
            int freqs_dir = 4) {
    hidden = hidden_width;
    z_freqs = freqs_z;
    dir_freqs = freqs_dir;
    std::mt19937_64 rng(seed);
    auto kaiming = [&](MatX<T> &w, int rows, int cols) {
      std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / cols));
      w.resize(rows, cols);
      for (Eigen::Index i = 0; i < w.size(); ++i)
        w.data()[i] = T(dist(rng));
    };
    kaiming(w1, hidden, input_width());
    kaiming(w2, hidden, hidden);
    // small positive bias keeps units alive at init (and off the ReLU kink)
    b1 = VecX<T>::Constant(hidden, T(0.01));
    b2 = VecX<T>::Constant(hidden, T(0.01));
    std::uniform_real_distribution<double> small(-0.01, 0.01);
    for (int h = 0; h < 5; ++h) {
      head_w[h].resize(3, hidden);
      for (Eigen::Index i = 0; i < head_w[h].size(); ++i)
        head_w[h].data()[i] = T(small(rng));
      head_b[h] = VecX<T>::Zero(3);
    }
  }

  struct Cache {
    MatX<T> x;  // N x in
    MatX<T> h1; // N x hidden, post-ReLU
    MatX<T> h2; // N x hidden, post-ReLU
  };

  /// Batched forward over normalized depths and unit view directions.
  MediumBatch<T> forward(const VecX<T> &z_norm,
                         const std::vector<Vec3<T>> &dirs,
                         Cache *cache = nullptr) const {
    const Eigen::Index n = z_norm.size();
    MatX<T> x(n, input_width());
    std::vector<T> buf(std::max(2 * z_freqs, 6 * dir_freqs));
    for (Eigen::Index i = 0; i < n; ++i) {
      pos_encode(z_norm[i], z_freqs, buf.data());
      for (int j = 0; j < 2 * z_freqs; ++j)
        x(i, j) = buf[j];
      pos_encode(dirs[i], dir_freqs, buf.data());
      for (int j = 0; j < 6 * dir_freqs; ++j)
        x(i, 2 * z_freqs + j) = buf[j];
    }

    MatX<T> h1 = (x * w1.transpose()).rowwise() + b1.transpose();
    h1 = h1.cwiseMax(T(0));
    MatX<T> h2 = (h1 * w2.transpose()).rowwise() + b2.transpose();
    h2 = h2.cwiseMax(T(0));

    MediumBatch<T> out;
    auto head = [&](int h) -> MatX<T> {
      return (h2 * head_w[h].transpose()).rowwise() + head_b[h].transpose();
    };
    out.t_d = head(0).unaryExpr([](T v) { return sigmoid(v); });
    out.t_b = head(1).unaryExpr([](T v) { return sigmoid(v); });
    out.beta_d = head(2).unaryExpr([](T v) { return softplus(v); });
    out.beta_b = head(3).unaryExpr([](T v) { return softplus(v); });
    out.b = head(4).unaryExpr([](T v) { return sigmoid(v); });

    if (!out.t_d.allFinite() || !out.t_b.allFinite() ||
        !out.beta_d.allFinite() || !out.beta_b.allFinite() ||
        !out.b.allFinite())
      fail(ErrorCode::NonFiniteActivation,
           "medium_forward: non-finite activation (diverged training?)");

    if (cache) {
      cache->x = std::move(x);
      cache->h1 = std::move(h1);
      cache->h2 = std::move(h2);
    }
    return out;
  }

  /// Single-sample convenience used by the per-operation tests.
  MediumParams<T> forward_one(T z_norm, const Vec3<T> &dir) const {
    VecX<T> z(1);
    z[0] = z_norm;
    auto batch = forward(z, {dir});
    return batch.row(0);
  }

  /// Exact reverse-mode gradients. `out` must be the forward result for
  /// `cache`. Returns d(loss)/d(z_norm) per row in d_z_norm (the encoding
  /// chain); weight gradients accumulate into `grads`.
  void backward(const Cache &cache, const MediumBatch<T> &out,
                const MediumBatch<T> &upstream, MediumNetGrads<T> &grads,
                VecX<T> *d_z_norm = nullptr) const;
};

/// Weight-space gradients mirroring MediumNet's parameters.
template <typename T> struct MediumNetGrads {
  MatX<T> w1, w2;
  VecX<T> b1, b2;
  std::array<MatX<T>, 5> head_w;
  std::array<VecX<T>, 5> head_b;

  void resize_zero(const MediumNet<T> &net) {
    w1 = MatX<T>::Zero(net.w1.rows(), net.w1.cols());
    w2 = MatX<T>::Zero(net.w2.rows(), net.w2.cols());
    b1 = VecX<T>::Zero(net.b1.size());
    b2 = VecX<T>::Zero(net.b2.size());
    for (int h = 0; h < 5; ++h) {
      head_w[h] = MatX<T>::Zero(net.head_w[h].rows(), net.head_w[h].cols());
      head_b[h] = VecX<T>::Zero(net.head_b[h].size());
    }
  }
};

template <typename T>
void MediumNet<T>::backward(const Cache &cache, const MediumBatch<T> &out,
                            const MediumBatch<T> &upstream,
                            MediumNetGrads<T> &grads,
                            VecX<T> *d_z_norm) const {
  const Eigen::Index n = cache.x.rows();

  // activation derivatives from outputs: sigmoid' = s(1-s),
  // softplus' = sigmoid(pre) = 1 - exp(-softplus(pre))
  auto sig_pre = [](const MatX<T> &o, const MatX<T> &up) -> MatX<T> {
    return up.array() * o.array() * (T(1) - o.array());
  };
  auto softplus_pre = [](const MatX<T> &o, const MatX<T> &up) -> MatX<T> {
    return up.array() * (T(1) - (-o.array()).exp());
  };
  std::array<MatX<T>, 5> d_pre = {
      sig_pre(out.t_d, upstream.t_d), sig_pre(out.t_b, upstream.t_b),
      softplus_pre(out.beta_d, upstream.beta_d),
      softplus_pre(out.beta_b, upstream.beta_b), sig_pre(out.b, upstream.b)};

  MatX<T> d_h2 = MatX<T>::Zero(n, hidden);
  for (int h = 0; h < 5; ++h) {
    grads.head_w[h] += d_pre[h].transpose() * cache.h2;
    grads.head_b[h] += d_pre[h].colwise().sum().transpose();
    d_h2 += d_pre[h] * head_w[h];
  }

  MatX<T> d_a2 =
      (d_h2.array() * (cache.h2.array() > T(0)).template cast<T>()).matrix();
  grads.w2 += d_a2.transpose() * cache.h1;
  grads.b2 += d_a2.colwise().sum().transpose();

  MatX<T> d_h1 = d_a2 * w2;
  MatX<T> d_a1 =
      (d_h1.array() * (cache.h1.array() > T(0)).template cast<T>()).matrix();
  grads.w1 += d_a1.transpose() * cache.x;
  grads.b1 += d_a1.colwise().sum().transpose();

  if (d_z_norm) {
    MatX<T> d_x = d_a1 * w1;
    d_z_norm->resize(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      T acc = T(0);
      T freq = T(M_PI);
      for (int k = 0; k < z_freqs; ++k) {
        // x held sin(freq z), cos(freq z) at columns 2k, 2k+1
        acc += d_x(i, 2 * k) * freq * cache.x(i, 2 * k + 1);
        acc -= d_x(i, 2 * k + 1) * freq * cache.x(i, 2 * k);
        freq *= T(2);
      }
      (*d_z_norm)[i] = acc;
    }
  }
}

} // namespace uwsplat
