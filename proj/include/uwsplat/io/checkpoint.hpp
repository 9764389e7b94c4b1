// Copyright Contributors to the uwsplat Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "uwsplat/gaussian.hpp"
#include "uwsplat/medium.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

namespace uwsplat {

/// Gaussians persist as a binary little-endian PLY using the de-facto 3DGS
/// property names (x y z, nx ny nz, f_dc_*, f_rest_*, opacity, scale_*,
/// rot_*), so third-party splat viewers can open checkpoints directly.
/// The medium MLP lives in a sidecar: magic "UWGSMLP1", a layer count,
/// per-layer (rows, cols) u32 pairs, then row-major float32 data.

template <typename T> struct Checkpoint {
  GaussianCloud<T> cloud;
  MediumNet<T> net;
  std::int64_t iteration = 0;
  std::uint64_t config_hash = 0;
};

namespace detail {

inline void write_u32(std::ostream &out, std::uint32_t v) {
  out.write(reinterpret_cast<const char *>(&v), 4);
}

inline std::uint32_t read_u32(std::istream &in, const std::string &what) {
  std::uint32_t v = 0;
  in.read(reinterpret_cast<char *>(&v), 4);
  if (!in)
    fail(ErrorCode::VersionMismatch, "truncated " + what);
  return v;
}

inline void write_f32(std::ostream &out, float v) {
  out.write(reinterpret_cast<const char *>(&v), 4);
}

} // namespace detail

template <typename T>
void save_ply(const std::string &path, const GaussianCloud<T> &cloud,
              std::int64_t iteration = 0, std::uint64_t config_hash = 0) {
  if (cloud.size() == 0)
    fail(ErrorCode::IoError, "save_ply: refusing to write an empty cloud");
  std::ofstream out(path, std::ios::binary);
  if (!out)
    fail(ErrorCode::IoError, "cannot write '" + path + "'");

  const int basis = cloud.basis();
  const int rest = 3 * (basis - 1);
  std::ostringstream hdr;
  hdr << "ply\nformat binary_little_endian 1.0\n";
  hdr << "comment iteration " << iteration << "\n";
  hdr << "comment config_hash " << std::hex << config_hash << std::dec << "\n";
  hdr << "element vertex " << cloud.size() << "\n";
  for (const char *p : {"x", "y", "z", "nx", "ny", "nz"})
    hdr << "property float " << p << "\n";
  for (int k = 0; k < 3; ++k)
    hdr << "property float f_dc_" << k << "\n";
  for (int k = 0; k < rest; ++k)
    hdr << "property float f_rest_" << k << "\n";
  hdr << "property float opacity\n";
  for (int k = 0; k < 3; ++k)
    hdr << "property float scale_" << k << "\n";
  for (int k = 0; k < 4; ++k)
    hdr << "property float rot_" << k << "\n";
  hdr << "end_header\n";
  out << hdr.str();

  for (std::size_t i = 0; i < cloud.size(); ++i) {
    for (int k = 0; k < 3; ++k)
      detail::write_f32(out, float(cloud.positions[i][k]));
    for (int k = 0; k < 3; ++k)
      detail::write_f32(out, 0.0f); // normals, unused
    const T *sh = cloud.sh_at(i);
    for (int ch = 0; ch < 3; ++ch)
      detail::write_f32(out, float(sh[ch * basis]));
    for (int ch = 0; ch < 3; ++ch) // channel-major rest block
      for (int b = 1; b < basis; ++b)
        detail::write_f32(out, float(sh[ch * basis + b]));
    detail::write_f32(out, float(cloud.logit_opacities[i]));
    for (int k = 0; k < 3; ++k)
      detail::write_f32(out, float(cloud.log_scales[i][k]));
    const Quat<T> &q = cloud.rotations[i];
    detail::write_f32(out, float(q.w()));
    detail::write_f32(out, float(q.x()));
    detail::write_f32(out, float(q.y()));
    detail::write_f32(out, float(q.z()));
  }
  if (!out)
    fail(ErrorCode::IoError, "write failed for '" + path + "'");
}

template <typename T>
GaussianCloud<T> load_ply(const std::string &path,
                          std::int64_t *iteration = nullptr,
                          std::uint64_t *config_hash = nullptr) {
  std::ifstream in(path, std::ios::binary);
  if (!in)
    fail(ErrorCode::MissingFile, "cannot open '" + path + "'");

  std::string line;
  if (!std::getline(in, line) || line != "ply")
    fail(ErrorCode::VersionMismatch, "'" + path + "' is not a PLY file");
  if (!std::getline(in, line) || line != "format binary_little_endian 1.0")
    fail(ErrorCode::VersionMismatch, "unsupported PLY format in '" + path + "'");

  std::size_t count = 0;
  std::vector<std::string> props;
  while (std::getline(in, line)) {
    if (line == "end_header")
      break;
    std::istringstream ss(line);
    std::string tok;
    ss >> tok;
    if (tok == "comment") {
      std::string key;
      ss >> key;
      if (key == "iteration" && iteration)
        ss >> *iteration;
      if (key == "config_hash" && config_hash)
        ss >> std::hex >> *config_hash;
    } else if (tok == "element") {
      std::string kind;
      ss >> kind >> count;
      if (kind != "vertex")
        fail(ErrorCode::VersionMismatch, "unexpected PLY element '" + kind + "'");
    } else if (tok == "property") {
      std::string type, name;
      ss >> type >> name;
      if (type != "float")
        fail(ErrorCode::VersionMismatch, "non-float PLY property '" + name + "'");
      props.push_back(name);
    }
  }
  if (count == 0 || props.empty())
    fail(ErrorCode::VersionMismatch, "PLY header incomplete in '" + path + "'");

  auto index_of = [&](const std::string &name) {
    for (std::size_t k = 0; k < props.size(); ++k)
      if (props[k] == name)
        return std::ptrdiff_t(k);
    return std::ptrdiff_t(-1);
  };
  // count f_rest properties to recover the SH degree
  int rest = 0;
  while (index_of("f_rest_" + std::to_string(rest)) >= 0)
    ++rest;
  if (rest % 3 != 0)
    fail(ErrorCode::VersionMismatch, "f_rest count is not a multiple of 3");
  const int basis = rest / 3 + 1;
  int degree = -1;
  for (int d = 0; d <= kMaxShDegree; ++d)
    if (sh_basis_count(d) == basis)
      degree = d;
  if (degree < 0)
    fail(ErrorCode::VersionMismatch, "f_rest count matches no SH degree");

  std::vector<std::ptrdiff_t> at;
  auto need = [&](const std::string &name) {
    const auto k = index_of(name);
    if (k < 0)
      fail(ErrorCode::VersionMismatch, "PLY property '" + name + "' missing");
    at.push_back(k);
  };
  for (const char *p : {"x", "y", "z"})
    need(p);
  for (int k = 0; k < 3; ++k)
    need("f_dc_" + std::to_string(k));
  for (int k = 0; k < rest; ++k)
    need("f_rest_" + std::to_string(k));
  need("opacity");
  for (int k = 0; k < 3; ++k)
    need("scale_" + std::to_string(k));
  for (int k = 0; k < 4; ++k)
    need("rot_" + std::to_string(k));

  GaussianCloud<T> cloud;
  cloud.sh_degree = degree;
  cloud.resize(count);
  std::vector<float> row(props.size());
  for (std::size_t i = 0; i < count; ++i) {
    in.read(reinterpret_cast<char *>(row.data()),
            std::streamsize(row.size() * 4));
    if (!in)
      fail(ErrorCode::VersionMismatch, "PLY payload shorter than declared");
    std::size_t f = 0;
    for (int k = 0; k < 3; ++k)
      cloud.positions[i][k] = T(row[at[f++]]);
    T *sh = cloud.sh_at(i);
    for (int ch = 0; ch < 3; ++ch)
      sh[ch * basis] = T(row[at[f++]]);
    for (int ch = 0; ch < 3; ++ch)
      for (int b = 1; b < basis; ++b)
        sh[ch * basis + b] = T(row[at[f++]]);
    cloud.logit_opacities[i] = T(row[at[f++]]);
    for (int k = 0; k < 3; ++k)
      cloud.log_scales[i][k] = T(row[at[f++]]);
    const float w = row[at[f++]], x = row[at[f++]], y = row[at[f++]],
                z = row[at[f++]];
    cloud.rotations[i] = Quat<T>(T(w), T(x), T(y), T(z));
  }
  return cloud;
}

inline constexpr char kMlpMagic[8] = {'U', 'W', 'G', 'S', 'M', 'L', 'P', '1'};

template <typename T>
void save_mlp(const std::string &path, const MediumNet<T> &net) {
  std::ofstream out(path, std::ios::binary);
  if (!out)
    fail(ErrorCode::IoError, "cannot write '" + path + "'");
  out.write(kMlpMagic, 8);

  auto layers = [&]() {
    std::vector<std::pair<std::uint32_t, std::uint32_t>> shapes;
    std::vector<const T *> data;
    auto add = [&](const auto &m) {
      shapes.push_back({std::uint32_t(m.rows()), std::uint32_t(m.cols())});
      data.push_back(m.data());
    };
    add(net.w1);
    add(net.b1);
    add(net.w2);
    add(net.b2);
    for (int h = 0; h < 5; ++h) {
      add(net.head_w[h]);
      add(net.head_b[h]);
    }
    return std::make_pair(shapes, data);
  }();

  detail::write_u32(out, std::uint32_t(layers.first.size()));
  for (std::size_t k = 0; k < layers.first.size(); ++k) {
    const auto [rows, cols] = layers.first[k];
    detail::write_u32(out, rows);
    detail::write_u32(out, cols);
    // Eigen stores column-major; emit row-major as declared
    for (std::uint32_t r = 0; r < rows; ++r)
      for (std::uint32_t c = 0; c < cols; ++c)
        detail::write_f32(out, float(layers.second[k][c * rows + r]));
  }
  if (!out)
    fail(ErrorCode::IoError, "write failed for '" + path + "'");
}

/// Frequencies are not stored in the sidecar; callers pass the encoding
/// config and the shapes are validated against it.
template <typename T>
MediumNet<T> load_mlp(const std::string &path, int z_freqs = 4,
                      int dir_freqs = 4) {
  std::ifstream in(path, std::ios::binary);
  if (!in)
    fail(ErrorCode::MissingFile, "cannot open '" + path + "'");
  char magic[8] = {};
  in.read(magic, 8);
  if (!in || std::memcmp(magic, kMlpMagic, 8) != 0)
    fail(ErrorCode::VersionMismatch, "'" + path + "' has the wrong magic");
  const std::uint32_t n_layers = detail::read_u32(in, path);
  if (n_layers != 14)
    fail(ErrorCode::VersionMismatch, "expected 14 layers, found " +
                                         std::to_string(n_layers));

  std::vector<MatX<T>> mats;
  for (std::uint32_t k = 0; k < n_layers; ++k) {
    const std::uint32_t rows = detail::read_u32(in, path);
    const std::uint32_t cols = detail::read_u32(in, path);
    if (rows == 0 || cols == 0 || std::size_t(rows) * cols > (1u << 26))
      fail(ErrorCode::VersionMismatch, "implausible layer shape in '" + path + "'");
    MatX<T> m(rows, cols);
    for (std::uint32_t r = 0; r < rows; ++r)
      for (std::uint32_t c = 0; c < cols; ++c) {
        float v = 0;
        in.read(reinterpret_cast<char *>(&v), 4);
        if (!in)
          fail(ErrorCode::VersionMismatch, "truncated payload in '" + path + "'");
        m(r, c) = T(v);
      }
    mats.push_back(std::move(m));
  }

  MediumNet<T> net;
  net.z_freqs = z_freqs;
  net.dir_freqs = dir_freqs;
  net.hidden = int(mats[0].rows());
  net.w1 = mats[0];
  net.b1 = mats[1].col(0);
  net.w2 = mats[2];
  net.b2 = mats[3].col(0);
  for (int h = 0; h < 5; ++h) {
    net.head_w[h] = mats[4 + 2 * h];
    net.head_b[h] = mats[5 + 2 * h].col(0);
  }
  if (net.w1.cols() != net.input_width() || net.w2.rows() != net.hidden ||
      net.w2.cols() != net.hidden || net.b1.size() != net.hidden ||
      net.b2.size() != net.hidden)
    fail(ErrorCode::VersionMismatch, "layer shapes do not fit the MLP layout");
  for (int h = 0; h < 5; ++h)
    if (net.head_w[h].rows() != 3 || net.head_w[h].cols() != net.hidden ||
        net.head_b[h].size() != 3)
      fail(ErrorCode::VersionMismatch, "head shapes do not fit the MLP layout");
  return net;
}

/// Checkpoint = <base>.ply + <base>.mlp.
template <typename T>
void save_checkpoint(const std::string &base, const Checkpoint<T> &ckpt) {
  save_ply(base + ".ply", ckpt.cloud, ckpt.iteration, ckpt.config_hash);
  save_mlp(base + ".mlp", ckpt.net);
}

template <typename T>
Checkpoint<T> load_checkpoint(const std::string &base, int z_freqs = 4,
                              int dir_freqs = 4) {
  Checkpoint<T> ckpt;
  ckpt.cloud = load_ply<T>(base + ".ply", &ckpt.iteration, &ckpt.config_hash);
  ckpt.net = load_mlp<T>(base + ".mlp", z_freqs, dir_freqs);
  return ckpt;
}

} // namespace uwsplat
