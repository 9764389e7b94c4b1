// Copyright Contributors to the uwsplat Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "uwsplat/io/colmap.hpp"
#include "uwsplat/io/png.hpp"
#include "uwsplat/medium.hpp"
#include "uwsplat/render.hpp"
#include "uwsplat/scene.hpp"

#include <json.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

namespace uwsplat {

/// Fully ground-truthed synthetic underwater scenes: random opaque
/// Gaussians rendered with the project's own rasterizer give clean images
/// J and exact depths; targets follow I = J exp(-beta_d z) + b (1 -
/// exp(-beta_b z)) per pixel. Optionally a solid moving square is pasted
/// into a subset of views as a distractor, with exact masks kept.

struct SynthDistractor {
  int size_px = 12;
  Vec3<double> color{0.9, 0.1, 0.1};
  Vec2<double> start{8, 8};      // top-left corner in the first view, px
  Vec2<double> velocity{3, 2};   // px per view index
  double view_fraction = 0.5;    // present in the first ceil(f*n) views
};

struct SynthSceneSpec {
  std::uint64_t seed = 1;
  int n_gaussians = 300;
  Vec3<double> volume_center{0, 0, 5};
  Vec3<double> volume_half{1, 1, 1};
  Vec3<double> beta_d{0.4, 0.3, 0.2};
  Vec3<double> beta_b{0.35, 0.25, 0.2};
  Vec3<double> b{0.2, 0.45, 0.55};
  int n_views = 12;
  int width = 64, height = 64;
  double focal = 0;        // 0: defaults to image width
  double ring_radius = 1.2; // camera orbit radius around the volume axis
  double ring_distance = 4; // orbit plane distance in front of the center
  double dolly = 1.0; // camera distance sweeps ring_distance*dolly down to
                      // ring_distance/dolly across the views; 1 = fixed orbit
  bool with_distractor = false;
  SynthDistractor distractor;

  void validate() const {
    if ((beta_d.array() < 0).any() || (beta_b.array() < 0).any())
      fail(ErrorCode::ConfigError, "synth: beta must be non-negative");
    if ((b.array() < 0).any() || (b.array() > 1).any())
      fail(ErrorCode::ConfigError, "synth: b must lie in [0,1]");
    if (n_views < 1 || n_gaussians < 1 || width < 8 || height < 8)
      fail(ErrorCode::ConfigError, "synth: degenerate scene dimensions");
    if (!(dolly >= 1.0))
      fail(ErrorCode::ConfigError, "synth: dolly must be >= 1");
  }
};

struct SynthTruth {
  Vec3<double> beta_d, beta_b, b;
  std::vector<ImageF> clean;        // J per view
  std::vector<ImageF> depth_metric; // per-pixel z in scene units
  std::vector<Mask> distractor_masks; // empty mask when absent
  double far_depth = 0;             // z assigned to uncovered pixels
};

struct SynthResult {
  SceneBundle bundle;
  SynthTruth truth;
};

/// Eq. of the formation model for one pixel.
template <typename T>
Vec3<T> underwater_pixel(const Vec3<T> &j, T z, const Vec3<T> &beta_d,
                         const Vec3<T> &beta_b, const Vec3<T> &b) {
  const Vec3<T> t_d = (-beta_d * z).array().exp();
  const Vec3<T> t_b = (-beta_b * z).array().exp();
  return (j.array() * t_d.array() + b.array() * (T(1) - t_b.array()))
      .matrix();
}

inline SynthResult generate_synth_scene(const SynthSceneSpec &spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  auto uni = [&](double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(rng);
  };

  // opaque cloud inside the volume; DC-only SH keeps colors view-free
  GaussianCloud<double> cloud;
  cloud.sh_degree = 0;
  cloud.resize(std::size_t(spec.n_gaussians));
  const double kDcScale = 0.28209479177387814;
  for (int i = 0; i < spec.n_gaussians; ++i) {
    for (int k = 0; k < 3; ++k)
      cloud.positions[i][k] =
          spec.volume_center[k] + uni(-1, 1) * spec.volume_half[k];
    Quat<double> q(uni(-1, 1), uni(-1, 1), uni(-1, 1), uni(-1, 1));
    cloud.rotations[i] = q.normalized();
    const double s = uni(0.08, 0.25) * spec.volume_half.maxCoeff();
    for (int k = 0; k < 3; ++k)
      cloud.log_scales[i][k] = std::log(s * uni(0.7, 1.3));
    cloud.logit_opacities[i] = inverse_sigmoid(0.99);
    for (int ch = 0; ch < 3; ++ch)
      cloud.sh_at(i)[ch] = (uni(0.1, 0.9) - 0.5) / kDcScale;
  }

  SynthResult out;
  out.truth.beta_d = spec.beta_d;
  out.truth.beta_b = spec.beta_b;
  out.truth.b = spec.b;
  out.truth.far_depth =
      spec.dolly * spec.ring_distance + 2.0 * spec.volume_half.norm();

  const double focal = spec.focal > 0 ? spec.focal : double(spec.width);
  Camera proto;
  proto.id = 1;
  proto.width = spec.width;
  proto.height = spec.height;
  proto.fx = proto.fy = focal;
  proto.cx = spec.width * 0.5;
  proto.cy = spec.height * 0.5;
  out.bundle.intrinsics[1] = proto;

  const int distractor_views =
      spec.with_distractor
          ? int(std::ceil(spec.distractor.view_fraction * spec.n_views))
          : 0;

  const Vec3<double> bg(0.15, 0.15, 0.15); // clean-image background J
  for (int vi = 0; vi < spec.n_views; ++vi) {
    const double theta = 2.0 * M_PI * vi / spec.n_views;
    // Spiral in from dolly x distance to distance / dolly (geometric sweep)
    // so every scene point is observed over a wide range of camera depths.
    const double frac = spec.n_views > 1 ? double(vi) / (spec.n_views - 1) : 0;
    const double zoom = spec.dolly * std::pow(spec.dolly, -2.0 * frac);
    const Vec3<double> eye =
        spec.volume_center +
        zoom * Vec3<double>(spec.ring_radius * std::cos(theta),
                            spec.ring_radius * std::sin(theta),
                            -spec.ring_distance);
    Camera cam = Camera::look_at(eye, spec.volume_center, {0, 1, 0},
                                 spec.width, spec.height, focal);
    cam.id = 1;

    auto render = render_cloud(cloud, cam, bg);

    View v;
    v.intrinsics_id = 1;
    char name[16];
    std::snprintf(name, sizeof name, "v%03d.png", vi);
    v.name = name;
    v.camera = cam;

    ImageF clean(spec.height, spec.width, 3);
    ImageF zmap(spec.height, spec.width, 1);
    ImageF target(spec.height, spec.width, 3);
    for (int y = 0; y < spec.height; ++y)
      for (int x = 0; x < spec.width; ++x) {
        Vec3<double> j;
        for (int ch = 0; ch < 3; ++ch)
          j[ch] = render.color.at(y, x, ch);
        const double a = render.alpha.at(y, x);
        const double z = a > 0.5 ? render.depth.at(y, x) / a
                                 : out.truth.far_depth;
        const Vec3<double> i_px =
            underwater_pixel(j, z, spec.beta_d, spec.beta_b, spec.b);
        for (int ch = 0; ch < 3; ++ch) {
          clean.at(y, x, ch) = float(j[ch]);
          target.at(y, x, ch) = float(i_px[ch]);
        }
        zmap.at(y, x) = float(z);
      }

    Mask dmask(spec.height, spec.width, 1, 0);
    if (vi < distractor_views) {
      const int sx = int(std::lround(spec.distractor.start.x() +
                                     spec.distractor.velocity.x() * vi));
      const int sy = int(std::lround(spec.distractor.start.y() +
                                     spec.distractor.velocity.y() * vi));
      for (int y = sy; y < sy + spec.distractor.size_px; ++y)
        for (int x = sx; x < sx + spec.distractor.size_px; ++x)
          if (y >= 0 && y < spec.height && x >= 0 && x < spec.width) {
            dmask.at(y, x) = 1;
            for (int ch = 0; ch < 3; ++ch)
              target.at(y, x, ch) = float(spec.distractor.color[ch]);
          }
    }

    // pseudo-depth input: the true depth, relative (min-max normalized)
    v.depth = zmap;
    minmax_normalize(v.depth.data());
    v.image = target;
    out.bundle.views.push_back(std::move(v));
    out.truth.clean.push_back(std::move(clean));
    out.truth.depth_metric.push_back(std::move(zmap));
    out.truth.distractor_masks.push_back(std::move(dmask));
  }

  // init points: a jittered half of the Gaussians, as a sparse-SfM stand-in
  std::normal_distribution<double> jitter(0.0, 0.02);
  for (int i = 0; i < spec.n_gaussians; i += 2) {
    InitPoint p;
    p.position = cloud.positions[i] +
                 Vec3<double>(jitter(rng), jitter(rng), jitter(rng));
    for (int ch = 0; ch < 3; ++ch)
      p.color[ch] =
          std::clamp(cloud.sh_at(i)[ch] * kDcScale + 0.5, 0.0, 1.0);
    out.bundle.init_points.push_back(p);
  }
  out.bundle.make_split();
  out.bundle.validate();
  return out;
}

/// Writes the scene in the layout load_colmap reads, plus truth artifacts:
/// clean/ (J), masks/ (distractor), ground_truth.json.
inline void write_synth_scene(const std::string &dir, const SynthResult &res) {
  namespace fs = std::filesystem;
  fs::create_directories(dir + "/images");
  fs::create_directories(dir + "/depths");
  fs::create_directories(dir + "/clean");
  fs::create_directories(dir + "/masks");
  save_colmap_text(dir, res.bundle);

  nlohmann::json truth;
  for (int ch = 0; ch < 3; ++ch) {
    truth["beta_d"].push_back(res.truth.beta_d[ch]);
    truth["beta_b"].push_back(res.truth.beta_b[ch]);
    truth["b"].push_back(res.truth.b[ch]);
  }
  truth["far_depth"] = res.truth.far_depth;

  for (std::size_t i = 0; i < res.bundle.views.size(); ++i) {
    const View &v = res.bundle.views[i];
    const std::string stem = fs::path(v.name).stem().string();
    save_png_rgb(dir + "/images/" + v.name, v.image);
    save_png_gray16(dir + "/depths/" + stem + ".png", v.depth);
    save_png_rgb(dir + "/clean/" + v.name, res.truth.clean[i]);

    bool any = false;
    for (auto m : res.truth.distractor_masks[i].data())
      any |= m != 0;
    if (any)
      save_png_mask(dir + "/masks/" + stem + ".png", res.truth.distractor_masks[i]);
    truth["views"].push_back({{"name", v.name}, {"distractor", any}});
  }
  std::ofstream out(dir + "/ground_truth.json");
  if (!out)
    fail(ErrorCode::IoError, "cannot write ground_truth.json");
  out << truth.dump(2) << "\n";
}

/// Least-squares estimate of (beta_d, beta_b, b) per channel from aligned
/// clean/underwater images and metric depth, via Levenberg-Marquardt on the
/// formation model.
struct MediumFit {
  Vec3<double> beta_d = Vec3<double>::Zero();
  Vec3<double> beta_b = Vec3<double>::Zero();
  Vec3<double> b = Vec3<double>::Zero();
  double rms = 0;
};

template <typename T>
MediumFit invert_medium(const Image<T> &underwater, const Image<T> &clean,
                        const Image<T> &depth_metric) {
  require_same_shape(underwater, clean, "invert_medium");
  if (depth_metric.height() != underwater.height() ||
      depth_metric.width() != underwater.width() ||
      depth_metric.channels() != 1)
    fail(ErrorCode::ShapeMismatch, "invert_medium: depth shape mismatch");

  std::vector<double> zs;
  zs.reserve(depth_metric.size());
  for (auto z : depth_metric.data())
    if (z > 0)
      zs.push_back(double(z));
  if (zs.size() < 8)
    fail(ErrorCode::InsufficientDepthVariation,
         "invert_medium: too few valid-depth pixels");
  const auto [zmin, zmax] = std::minmax_element(zs.begin(), zs.end());
  if (*zmax - *zmin < 1e-6 * std::max(1.0, *zmax))
    fail(ErrorCode::InsufficientDepthVariation,
         "invert_medium: depth is constant");

  MediumFit fit;
  double sq_sum = 0;
  std::size_t n_res = 0;
  for (int ch = 0; ch < 3; ++ch) {
    // residual r = J e^{-bd z} + b (1 - e^{-bb z}) - I over valid pixels
    std::vector<double> js, is, z;
    for (int y = 0; y < underwater.height(); ++y)
      for (int x = 0; x < underwater.width(); ++x)
        if (depth_metric.at(y, x) > 0) {
          js.push_back(double(clean.at(y, x, ch)));
          is.push_back(double(underwater.at(y, x, ch)));
          z.push_back(double(depth_metric.at(y, x)));
        }
    const std::size_t n = z.size();

    Vec3<double> p(0.1, 0.1, 0.5); // (beta_d, beta_b, b)
    double lambda = 1e-3;
    auto cost = [&](const Vec3<double> &q) {
      double c = 0;
      for (std::size_t k = 0; k < n; ++k) {
        const double r = js[k] * std::exp(-q[0] * z[k]) +
                         q[2] * (1.0 - std::exp(-q[1] * z[k])) - is[k];
        c += r * r;
      }
      return c;
    };
    double c_prev = cost(p);
    for (int it = 0; it < 200; ++it) {
      Mat3<double> jtj = Mat3<double>::Zero();
      Vec3<double> jtr = Vec3<double>::Zero();
      for (std::size_t k = 0; k < n; ++k) {
        const double ed = std::exp(-p[0] * z[k]);
        const double eb = std::exp(-p[1] * z[k]);
        const double r = js[k] * ed + p[2] * (1.0 - eb) - is[k];
        const Vec3<double> g(-z[k] * js[k] * ed, z[k] * p[2] * eb, 1.0 - eb);
        jtj += g * g.transpose();
        jtr += g * r;
      }
      Mat3<double> damped = jtj;
      damped.diagonal() += lambda * jtj.diagonal().cwiseMax(1e-12);
      const Vec3<double> delta = damped.ldlt().solve(-jtr);
      Vec3<double> trial = p + delta;
      trial[0] = std::max(trial[0], 0.0);
      trial[1] = std::max(trial[1], 0.0);
      trial[2] = std::clamp(trial[2], 0.0, 1.0);
      const double c_trial = cost(trial);
      if (c_trial < c_prev) {
        p = trial;
        lambda = std::max(lambda * 0.5, 1e-12);
        if (c_prev - c_trial < 1e-14 * std::max(1.0, c_prev)) {
          c_prev = c_trial;
          break;
        }
        c_prev = c_trial;
      } else {
        lambda *= 4.0;
        if (lambda > 1e12)
          break;
      }
    }
    fit.beta_d[ch] = p[0];
    fit.beta_b[ch] = p[1];
    fit.b[ch] = p[2];
    sq_sum += c_prev;
    n_res += n;
  }
  fit.rms = std::sqrt(sq_sum / double(std::max<std::size_t>(n_res, 1)));
  return fit;
}

} // namespace uwsplat
