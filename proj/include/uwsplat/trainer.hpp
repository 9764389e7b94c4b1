// Copyright Contributors to the uwsplat Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "uwsplat/bmm.hpp"
#include "uwsplat/density.hpp"
#include "uwsplat/gaussian.hpp"
#include "uwsplat/io/checkpoint.hpp"
#include "uwsplat/io/config.hpp"
#include "uwsplat/losses.hpp"
#include "uwsplat/medium.hpp"
#include "uwsplat/metrics.hpp"
#include "uwsplat/optimizer.hpp"
#include "uwsplat/rasterizer.hpp"
#include "uwsplat/render.hpp"
#include "uwsplat/scene.hpp"
#include "uwsplat/sh.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

namespace uwsplat {

/// Everything the training loop needs, flattened to scalars so a key=value
/// config file can populate it and a stable hash can fingerprint it.
struct TrainConfig {
  int iterations = 15000;
  int warmup_iters = 1000;
  std::uint64_t seed = 0;
  int threads = 1;
  int sh_degree = 3;

  LossWeights weights;         // lambda (L1 share), lambda_d, lambda_ca
  CloudLearningRates rates;    // per-attribute Adam rates
  double mlp_lr = 1e-3;
  std::int64_t lr_decay_steps = 0; // 0: decay over `iterations`

  DensityControlConfig density;
  BmmConfig bmm;
  bool dynamic = false; // enable motion masking during the main phase

  Vec3<double> background = Vec3<double>::Zero();

  // Ablation switches. disable_medium drops the water model entirely
  // (colors pass through, no restoration prior, no alignment loss);
  // disable_physics_dc reverts density control to plain gradient averaging;
  // disable_depth_loss removes the whole depth-supervised term (depth and
  // channel alignment).
  bool disable_medium = false;
  bool disable_physics_dc = false;
  bool disable_depth_loss = false;

  void validate() const {
    if (iterations < 0)
      fail(ErrorCode::ConfigError, "train: iterations must be >= 0");
    if (warmup_iters < 0)
      fail(ErrorCode::ConfigError, "train: warmup_iters must be >= 0");
    if (iterations > 0 && warmup_iters >= iterations)
      fail(ErrorCode::ConfigError,
           "train: warmup_iters must be < iterations");
    if (threads < 1)
      fail(ErrorCode::ConfigError, "train: threads must be >= 1");
    if (sh_degree < 0 || sh_degree > 3)
      fail(ErrorCode::ConfigError, "train: sh_degree must be in [0,3]");
    if (!(weights.lambda >= 0 && weights.lambda <= 1))
      fail(ErrorCode::ConfigError, "train: lambda must be in [0,1]");
    if (weights.lambda_d < 0 || weights.lambda_ca < 0)
      fail(ErrorCode::ConfigError, "train: loss weights must be >= 0");
    if (!(mlp_lr > 0))
      fail(ErrorCode::ConfigError, "train: mlp_lr must be > 0");
    if (lr_decay_steps < 0)
      fail(ErrorCode::ConfigError, "train: lr_decay_steps must be >= 0");
    if (!(bmm.trim_quantile > 0 && bmm.trim_quantile <= 1))
      fail(ErrorCode::ConfigError, "train: bmm_rho must be in (0,1]");
    if (bmm.stages < 1 || bmm.stages > 3)
      fail(ErrorCode::ConfigError, "train: bmm_stages must be 1, 2, or 3");
    rates.validate();
    density.validate();
  }

  /// Reads every recognized key, leaving unknown-key policing to the caller.
  static TrainConfig from_config(KeyValueConfig &kv) {
    TrainConfig c;
    c.iterations = int(kv.get_int("iterations", c.iterations));
    c.warmup_iters = int(kv.get_int("warmup_iters", c.warmup_iters));
    c.seed = std::uint64_t(kv.get_int("seed", std::int64_t(c.seed)));
    c.threads = int(kv.get_int("threads", c.threads));
    c.sh_degree = int(kv.get_int("sh_degree", c.sh_degree));

    c.weights.lambda = kv.get_double("lambda", c.weights.lambda);
    c.weights.lambda_d = kv.get_double("lambda_d", c.weights.lambda_d);
    c.weights.lambda_ca = kv.get_double("lambda_ca", c.weights.lambda_ca);

    c.rates.position = kv.get_double("lr_position", c.rates.position);
    c.rates.position_final =
        kv.get_double("lr_position_final", c.rates.position_final);
    c.rates.rotation = kv.get_double("lr_rotation", c.rates.rotation);
    c.rates.scale = kv.get_double("lr_scale", c.rates.scale);
    c.rates.opacity = kv.get_double("lr_opacity", c.rates.opacity);
    c.rates.sh_dc = kv.get_double("lr_sh_dc", c.rates.sh_dc);
    c.rates.sh_rest = kv.get_double("lr_sh_rest", c.rates.sh_dc / 20.0);
    c.mlp_lr = kv.get_double("lr_mlp", c.mlp_lr);
    c.lr_decay_steps = kv.get_int("lr_decay_steps", c.lr_decay_steps);

    c.density.tau = kv.get_double("densify_tau", c.density.tau);
    c.density.densify_interval =
        int(kv.get_int("densify_interval", c.density.densify_interval));
    c.density.densify_start =
        int(kv.get_int("densify_start", c.density.densify_start));
    c.density.densify_end =
        int(kv.get_int("densify_end", c.density.densify_end));
    c.density.prune_opacity =
        kv.get_double("prune_opacity", c.density.prune_opacity);
    c.density.max_screen_radius_px =
        kv.get_double("max_screen_radius_px", c.density.max_screen_radius_px);
    c.density.comp_clamp_max =
        kv.get_double("comp_clamp_max", c.density.comp_clamp_max);
    c.density.z_damp_ref = kv.get_double("z_damp_ref", c.density.z_damp_ref);
    c.density.clone_scale_frac =
        kv.get_double("clone_scale_frac", c.density.clone_scale_frac);
    c.density.split_scale_div =
        kv.get_double("split_scale_div", c.density.split_scale_div);
    c.density.enable_physics_comp =
        kv.get_bool("physics_comp", c.density.enable_physics_comp);
    c.density.enable_pixel_weighting =
        kv.get_bool("pixel_weighting", c.density.enable_pixel_weighting);
    c.density.enable_z_damp = kv.get_bool("z_damp", c.density.enable_z_damp);

    c.bmm.trim_quantile = kv.get_double("bmm_rho", c.bmm.trim_quantile);
    c.bmm.t_star = kv.get_double("bmm_t_star", c.bmm.t_star);
    c.bmm.t_r = kv.get_double("bmm_t_r", c.bmm.t_r);
    c.bmm.stages = int(kv.get_int("bmm_stages", c.bmm.stages));
    c.dynamic = kv.get_bool("dynamic", c.dynamic);

    c.background.x() = kv.get_double("background_r", c.background.x());
    c.background.y() = kv.get_double("background_g", c.background.y());
    c.background.z() = kv.get_double("background_b", c.background.z());

    c.disable_medium = kv.get_bool("disable_medium", c.disable_medium);
    c.disable_physics_dc =
        kv.get_bool("disable_physics_dc", c.disable_physics_dc);
    c.disable_depth_loss =
        kv.get_bool("disable_depth_loss", c.disable_depth_loss);
    return c;
  }

  /// Canonical key=value dump; the hash of this string fingerprints a run.
  std::string serialize() const {
    std::ostringstream os;
    os << std::setprecision(17);
    os << "iterations=" << iterations << "\nwarmup_iters=" << warmup_iters
       << "\nseed=" << seed << "\nthreads=" << threads
       << "\nsh_degree=" << sh_degree << "\nlambda=" << weights.lambda
       << "\nlambda_d=" << weights.lambda_d
       << "\nlambda_ca=" << weights.lambda_ca
       << "\nlr_position=" << rates.position
       << "\nlr_position_final=" << rates.position_final
       << "\nlr_rotation=" << rates.rotation << "\nlr_scale=" << rates.scale
       << "\nlr_opacity=" << rates.opacity << "\nlr_sh_dc=" << rates.sh_dc
       << "\nlr_sh_rest=" << rates.sh_rest << "\nlr_mlp=" << mlp_lr
       << "\nlr_decay_steps=" << lr_decay_steps
       << "\ndensify_tau=" << density.tau
       << "\ndensify_interval=" << density.densify_interval
       << "\ndensify_start=" << density.densify_start
       << "\ndensify_end=" << density.densify_end
       << "\nprune_opacity=" << density.prune_opacity
       << "\nmax_screen_radius_px=" << density.max_screen_radius_px
       << "\ncomp_clamp_max=" << density.comp_clamp_max
       << "\nz_damp_ref=" << density.z_damp_ref
       << "\nclone_scale_frac=" << density.clone_scale_frac
       << "\nsplit_scale_div=" << density.split_scale_div
       << "\nphysics_comp=" << density.enable_physics_comp
       << "\npixel_weighting=" << density.enable_pixel_weighting
       << "\nz_damp=" << density.enable_z_damp
       << "\nbmm_rho=" << bmm.trim_quantile << "\nbmm_t_star=" << bmm.t_star
       << "\nbmm_t_r=" << bmm.t_r << "\nbmm_stages=" << bmm.stages
       << "\ndynamic=" << dynamic
       << "\nbackground_r=" << background.x()
       << "\nbackground_g=" << background.y()
       << "\nbackground_b=" << background.z()
       << "\ndisable_medium=" << disable_medium
       << "\ndisable_physics_dc=" << disable_physics_dc
       << "\ndisable_depth_loss=" << disable_depth_loss << "\n";
    return os.str();
  }

  std::uint64_t config_hash() const { return fnv1a64(serialize()); }
};

/// Counters the ablation contracts are tested against.
struct RunStats {
  std::int64_t iterations_run = 0;
  std::int64_t medium_forward_calls = 0;
  // per-Gaussian gradient compensations performed with the physics factor on
  std::int64_t comp_enabled_accums = 0;
  std::int64_t densify_events = 0;
  // largest |gradient| the depth-supervised term ever contributed
  double da_grad_abs_max = 0;
};

struct TrainLogRow {
  int iteration = 0;
  double total = 0, rec = 0, depth = 0, ca = 0, gray = 0;
  std::size_t gaussians = 0;
  double inlier_frac = 1.0; // fraction of pixels the motion mask kept
};

inline void write_train_log(const std::string &path,
                            const std::vector<TrainLogRow> &log) {
  std::ofstream out(path);
  if (!out)
    fail(ErrorCode::IoError, "log: cannot write " + path);
  out << "iteration,total,rec,depth,ca,gray,gaussians,inlier_frac\n";
  out << std::setprecision(17);
  for (const auto &r : log)
    out << r.iteration << ',' << r.total << ',' << r.rec << ',' << r.depth
        << ',' << r.ca << ',' << r.gray << ',' << r.gaussians << ','
        << r.inlier_frac << '\n';
  if (!out)
    fail(ErrorCode::IoError, "log: write failed for " + path);
}

enum class RenderMode { Underwater, Clean };

/// Renders a view either through the water model (each Gaussian's color is
/// attenuated and backscattered at its own depth) or with raw colors.
template <typename T>
RenderOutput<T> render_scene_view(const GaussianCloud<T> &cloud,
                                  const MediumNet<T> &net,
                                  const Camera &camera, RenderMode mode,
                                  const Vec3<T> &background, T scene_radius,
                                  int threads = 1,
                                  const ProjectionOptions &opts = {}) {
  auto splats = project_cloud(cloud, camera, opts);
  if (mode == RenderMode::Underwater && !splats.empty()) {
    const Eigen::Index n = Eigen::Index(splats.size());
    VecX<T> z_norm{n};
    std::vector<Vec3<T>> dirs(splats.size());
    const Vec3<T> center = camera.center().template cast<T>();
    for (Eigen::Index i = 0; i < n; ++i) {
      z_norm[i] = splats[std::size_t(i)].depth / scene_radius;
      dirs[std::size_t(i)] =
          (cloud.positions[std::size_t(splats[std::size_t(i)].index)] - center)
              .normalized();
    }
    const auto med = net.forward(z_norm, dirs);
    for (Eigen::Index i = 0; i < n; ++i)
      splats[std::size_t(i)].color =
          transform_color(splats[std::size_t(i)].color, med.row(i));
  }
  RasterScratch<T> scratch;
  return rasterize(splats, camera.width, camera.height, background, &scratch,
                   threads);
}

/// PSNR/SSIM of the rendered views against their captured images. When
/// masks are given (one per id, nonzero = keep), flagged pixels are
/// excluded from both metrics.
template <typename T>
std::vector<Metrics>
evaluate_views(const GaussianCloud<T> &cloud, const MediumNet<T> &net,
               const SceneBundle &bundle,
               const std::vector<std::size_t> &view_ids, RenderMode mode,
               const Vec3<T> &background, T scene_radius,
               const std::vector<Mask> *masks = nullptr, int threads = 1) {
  if (masks && masks->size() != view_ids.size())
    fail(ErrorCode::SizeMismatch, "evaluate: need one mask per view");
  std::vector<Metrics> out;
  out.reserve(view_ids.size());
  for (std::size_t k = 0; k < view_ids.size(); ++k) {
    const View &v = bundle.views.at(view_ids[k]);
    const auto r = render_scene_view(cloud, net, v.camera, mode, background,
                                     scene_radius, threads);
    const Image<T> target = v.image.template cast<T>();
    const Mask *m = masks ? &(*masks)[k] : nullptr;
    out.push_back(compute_metrics(r.color, target, m));
  }
  return out;
}

template <typename T> struct TrainResult {
  Checkpoint<T> checkpoint;
  std::vector<TrainLogRow> log;
  RunStats stats;
};

/// The optimization loop: one view per iteration (round-robin, reshuffled
/// every epoch), a depth-only warm-up, then the full photometric phase with
/// optional motion masking and periodic density control.
template <typename T = double> class Trainer {
public:
  Trainer(SceneBundle bundle, TrainConfig cfg)
      : bundle_(std::move(bundle)), cfg_(std::move(cfg)) {
    cfg_.validate();
    if (bundle_.train_idx.empty() && bundle_.test_idx.empty())
      bundle_.make_split();
    if (bundle_.train_idx.empty())
      fail(ErrorCode::ConfigError, "train: no training views after split");
    bundle_.validate();

    density_cfg_ = cfg_.density;
    if (cfg_.disable_physics_dc) {
      density_cfg_.enable_physics_comp = false;
      density_cfg_.enable_pixel_weighting = false;
      density_cfg_.enable_z_damp = false;
    }

    scene_radius_ = T(bundle_.scene_radius());
    background_ = cfg_.background.template cast<T>();
    init_cloud();
    net_.init(cfg_.seed, 64, 4, 4);

    const std::int64_t decay =
        cfg_.lr_decay_steps > 0 ? cfg_.lr_decay_steps
                                : std::max<std::int64_t>(cfg_.iterations, 1);
    cloud_opt_.emplace(cloud_, cfg_.rates, scene_radius_, decay);
    med_opt_.emplace(net_, cfg_.mlp_lr);
    rng_.seed(cfg_.seed);

    targets_.resize(bundle_.views.size());
    depths_.resize(bundle_.views.size());
    for (std::size_t i = 0; i < bundle_.views.size(); ++i) {
      targets_[i] = bundle_.views[i].image.template cast<T>();
      if (bundle_.views[i].has_depth())
        depths_[i] = bundle_.views[i].depth.template cast<T>();
    }

    t_eps_ = kInitialTEps<T>;
    deck_ = bundle_.train_idx;
    deck_pos_ = deck_.size(); // force a shuffle on the first draw
  }

  TrainResult<T> train() {
    for (int it = 1; it <= cfg_.iterations; ++it)
      run_iteration(it);
    return {checkpoint(), log_, stats_};
  }

  void run_iteration(int it) {
    const TrainPhase phase =
        it <= cfg_.warmup_iters ? TrainPhase::Warmup : TrainPhase::Main;
    const std::size_t vid = next_view();
    const View &vw = bundle_.views[vid];
    const Camera &cam = vw.camera;
    const Image<T> &target = targets_[vid];
    const bool use_medium = !cfg_.disable_medium;
    const bool use_da = !cfg_.disable_depth_loss;

    // ---- forward ----
    auto splats = project_cloud(cloud_, cam, opts_);
    const std::size_t n = splats.size();
    std::vector<Vec3<T>> clean_colors(n);
    for (std::size_t i = 0; i < n; ++i)
      clean_colors[i] = splats[i].color;
    const Vec3<T> cam_center = cam.center().template cast<T>();

    typename MediumNet<T>::Cache cache;
    MediumBatch<T> med;
    VecX<T> z_metric;
    if (use_medium) {
      z_metric.resize(Eigen::Index(n));
      VecX<T> z_norm{Eigen::Index(n)};
      std::vector<Vec3<T>> dirs(n);
      for (std::size_t i = 0; i < n; ++i) {
        z_metric[Eigen::Index(i)] = splats[i].depth;
        z_norm[Eigen::Index(i)] = splats[i].depth / scene_radius_;
        dirs[i] =
            (cloud_.positions[std::size_t(splats[i].index)] - cam_center)
                .normalized();
      }
      try {
        med = net_.forward(z_norm, dirs, &cache);
      } catch (const Error &e) {
        if (e.code() == ErrorCode::NonFiniteActivation)
          fail(ErrorCode::DivergedLoss,
               "train: water model diverged at iteration " +
                   std::to_string(it));
        throw;
      }
      ++stats_.medium_forward_calls;
      for (std::size_t i = 0; i < n; ++i)
        splats[i].color =
            transform_color(clean_colors[i], med.row(Eigen::Index(i)));
    }

    const auto out_uw = rasterize(splats, cam.width, cam.height, background_,
                                  &scratch_uw_, cfg_.threads);

    // ---- losses ----
    double rec = 0, dep = 0, ca = 0, gray = 0;
    Image<T> d_rec, d_dep, d_gray;
    Mask omega;
    double inlier_frac = 1.0;
    if (phase == TrainPhase::Main) {
      if (cfg_.dynamic) {
        auto mm = compute_motion_mask(out_uw.color, target, t_eps_, cfg_.bmm);
        t_eps_ = mm.next_t_eps;
        if (cfg_.bmm.stages >= 3)
          omega = std::move(mm.omega);
        else if (cfg_.bmm.stages == 2)
          omega = bmm_combine(mm.omega1, mm.omega2, mm.omega2);
        else
          omega = std::move(mm.omega1);
        std::size_t kept = 0;
        for (std::uint8_t v : omega.data())
          kept += v != 0;
        inlier_frac = double(kept) / double(omega.size());
      }
      rec = rec_loss(out_uw.color, target, omega, cfg_.weights.lambda, &d_rec);
    }

    const bool have_depth = use_da && vw.has_depth();
    if (have_depth) {
      dep = depth_loss(out_uw.depth, depths_[vid], &d_dep);
      for (T &g : d_dep.data()) {
        g *= T(cfg_.weights.lambda_d);
        stats_.da_grad_abs_max =
            std::max(stats_.da_grad_abs_max, std::abs(double(g)));
      }
    }

    MediumBatch<T> d_med_ca;
    const bool have_ca = use_medium && use_da && n > 0;
    if (have_ca)
      ca = ca_loss(med, z_metric, &d_med_ca);

    // The restoration prior needs a second blend of the same splats with
    // raw colors: that render is the estimated clean image.
    const bool have_gray = phase == TrainPhase::Main && use_medium;
    std::vector<Splat2D<T>> splats_clean;
    RenderOutput<T> out_clean;
    if (have_gray) {
      splats_clean = splats;
      for (std::size_t i = 0; i < n; ++i)
        splats_clean[i].color = clean_colors[i];
      out_clean = rasterize(splats_clean, cam.width, cam.height, background_,
                            &scratch_clean_, cfg_.threads);
      gray = gray_world_loss(out_clean.color, &d_gray);
    }

    const double total = total_loss(rec, dep, ca, gray, cfg_.weights, phase);
    if (!std::isfinite(total))
      fail(ErrorCode::DivergedLoss,
           "train: non-finite loss at iteration " + std::to_string(it));

    // ---- backward ----
    RenderGrads<T> up_uw;
    if (phase == TrainPhase::Main)
      up_uw.d_color = &d_rec;
    if (have_depth)
      up_uw.d_depth = &d_dep;
    auto g_splat = rasterize_backward(splats, scratch_uw_, up_uw, background_,
                                      cfg_.threads);
    std::vector<SplatGrads<T>> g_clean;
    if (have_gray) {
      RenderGrads<T> up_clean;
      up_clean.d_color = &d_gray;
      g_clean = rasterize_backward(splats_clean, scratch_clean_, up_clean,
                                   background_, cfg_.threads);
    }

    // Merge both blends and reroute color gradients: the watered render's
    // color gradient splits between the raw color and the medium heads.
    MediumBatch<T> med_up;
    if (use_medium && n > 0) {
      med_up.set_zero(Eigen::Index(n));
      if (have_ca) {
        const T lca = T(cfg_.weights.lambda_ca);
        med_up.t_d = lca * d_med_ca.t_d;
        med_up.t_b = lca * d_med_ca.t_b;
        med_up.beta_d = lca * d_med_ca.beta_d;
        med_up.beta_b = lca * d_med_ca.beta_b;
        med_up.b = lca * d_med_ca.b;
        const double mx =
            std::max({med_up.t_d.cwiseAbs().maxCoeff(),
                      med_up.t_b.cwiseAbs().maxCoeff(),
                      med_up.beta_d.cwiseAbs().maxCoeff(),
                      med_up.beta_b.cwiseAbs().maxCoeff()});
        stats_.da_grad_abs_max = std::max(stats_.da_grad_abs_max, mx);
      }
    }
    for (std::size_t i = 0; i < n; ++i) {
      SplatGrads<T> &g = g_splat[i];
      const Vec3<T> d_color_uw = g.d_color;
      Vec3<T> d_color_raw;
      if (use_medium) {
        const Eigen::Index ei = Eigen::Index(i);
        const MediumParams<T> p = med.row(ei);
        d_color_raw = (d_color_uw.array() * p.t_d.array()).matrix();
        med_up.t_d.row(ei) +=
            (d_color_uw.array() * clean_colors[i].array()).matrix().transpose();
        med_up.t_b.row(ei) -=
            (d_color_uw.array() * p.b.array()).matrix().transpose();
        med_up.b.row(ei) +=
            (d_color_uw.array() * (T(1) - p.t_b.array())).matrix().transpose();
      } else {
        d_color_raw = d_color_uw;
      }
      if (have_gray) {
        const SplatGrads<T> &gc = g_clean[i];
        g.d_mean2d += gc.d_mean2d;
        g.d_cov_xx += gc.d_cov_xx;
        g.d_cov_xy += gc.d_cov_xy;
        g.d_cov_yy += gc.d_cov_yy;
        g.d_opacity += gc.d_opacity;
        g.d_depth += gc.d_depth;
        d_color_raw += gc.d_color;
      }
      g.d_color = d_color_raw;
    }

    MediumNetGrads<T> net_grads;
    if (use_medium) {
      net_grads.resize_zero(net_);
      if (n > 0) {
        VecX<T> d_znorm;
        net_.backward(cache, med, med_up, net_grads, &d_znorm);
        for (std::size_t i = 0; i < n; ++i)
          g_splat[i].d_depth += d_znorm[Eigen::Index(i)] / scene_radius_;
      }
    }

    cg_.resize_zero(cloud_);
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t idx = std::size_t(splats[i].index);
      const Vec3<T> dir = (cloud_.positions[idx] - cam_center).normalized();
      eval_sh_backward(cloud_.sh_at(idx), cloud_.basis(), cloud_.sh_degree,
                       dir, g_splat[i].d_color,
                       cg_.d_sh.data() + idx * std::size_t(cloud_.sh_stride()));
      project_backward(cloud_, idx, cam, g_splat[i], cg_, opts_);
    }

    // ---- density bookkeeping ----
    std::vector<T> t_d_means;
    if (use_medium && density_cfg_.enable_physics_comp) {
      t_d_means.resize(n);
      for (std::size_t i = 0; i < n; ++i)
        t_d_means[i] = med.t_d.row(Eigen::Index(i)).mean();
    }
    const auto cov = coverage_stats(scratch_uw_, g_splat);
    if (density_cfg_.enable_physics_comp)
      stats_.comp_enabled_accums += std::int64_t(n);
    accumulate_density_stats(cloud_, splats, cov, t_d_means, density_cfg_);

    // ---- update ----
    if (phase == TrainPhase::Warmup)
      std::fill(cg_.d_sh.begin(), cg_.d_sh.end(), T(0));
    cloud_opt_->step(cloud_, cg_);
    if (use_medium)
      med_opt_->step(net_, net_grads);
    cloud_.normalize_rotations();

    if (densify_due(it, density_cfg_)) {
      const auto ds =
          densify_and_prune(cloud_, density_cfg_, scene_radius_, rng_);
      cloud_opt_->remap(ds.source, cloud_.sh_stride());
      ++stats_.densify_events;
    }

    ++stats_.iterations_run;
    log_.push_back(
        {it, total, rec, dep, ca, gray, cloud_.size(), inlier_frac});
  }

  Checkpoint<T> checkpoint() const {
    return {cloud_, net_, stats_.iterations_run, cfg_.config_hash()};
  }

  RenderOutput<T> render_view(const Camera &camera, RenderMode mode) const {
    const RenderMode m =
        cfg_.disable_medium ? RenderMode::Clean : mode;
    return render_scene_view(cloud_, net_, camera, m, background_,
                             scene_radius_, cfg_.threads, opts_);
  }

  std::vector<Metrics> evaluate(const std::vector<std::size_t> &view_ids,
                                const std::vector<Mask> *masks = nullptr) const {
    const RenderMode m = cfg_.disable_medium ? RenderMode::Clean
                                             : RenderMode::Underwater;
    return evaluate_views(cloud_, net_, bundle_, view_ids, m, background_,
                          scene_radius_, masks, cfg_.threads);
  }

  const GaussianCloud<T> &cloud() const { return cloud_; }
  const MediumNet<T> &net() const { return net_; }
  const SceneBundle &bundle() const { return bundle_; }
  const TrainConfig &config() const { return cfg_; }
  const RunStats &stats() const { return stats_; }
  const std::vector<TrainLogRow> &log() const { return log_; }
  T t_eps() const { return t_eps_; }
  T scene_radius() const { return scene_radius_; }

private:
  void init_cloud() {
    const auto &pts = bundle_.init_points;
    if (pts.empty())
      fail(ErrorCode::MissingInitialPoints,
           "train: scene has no initialization points");
    const std::size_t n = pts.size();
    cloud_.sh_degree = cfg_.sh_degree;
    cloud_.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      cloud_.positions[i] = pts[i].position.template cast<T>();
      cloud_.rotations[i] = Quat<T>(T(1), T(0), T(0), T(0));
      cloud_.logit_opacities[i] = inverse_sigmoid(T(0.1));
      T *sh = cloud_.sh_at(i);
      for (int ch = 0; ch < 3; ++ch)
        sh[std::size_t(ch) * cloud_.basis()] =
            T((pts[i].color[ch] - 0.5) / 0.28209479177387814);
    }
    // isotropic scale from the mean distance to the three nearest points
    for (std::size_t i = 0; i < n; ++i) {
      std::array<double, 3> best{std::numeric_limits<double>::infinity(),
                                 std::numeric_limits<double>::infinity(),
                                 std::numeric_limits<double>::infinity()};
      for (std::size_t j = 0; j < n; ++j) {
        if (j == i)
          continue;
        const double d2 = (pts[j].position - pts[i].position).squaredNorm();
        if (d2 < best[2]) {
          best[2] = d2;
          std::sort(best.begin(), best.end());
        }
      }
      double mean_d2 = 0;
      int cnt = 0;
      for (double d2 : best)
        if (std::isfinite(d2)) {
          mean_d2 += d2;
          ++cnt;
        }
      const double d = cnt > 0 ? std::sqrt(mean_d2 / cnt)
                               : 0.1 * double(scene_radius_);
      const T s = T(std::max(d, 1e-7));
      cloud_.log_scales[i] = Vec3<T>::Constant(std::log(s));
    }
  }

  std::size_t next_view() {
    if (deck_pos_ >= deck_.size()) {
      std::shuffle(deck_.begin(), deck_.end(), rng_);
      deck_pos_ = 0;
    }
    return deck_[deck_pos_++];
  }

  SceneBundle bundle_;
  TrainConfig cfg_;
  DensityControlConfig density_cfg_;
  ProjectionOptions opts_;
  T scene_radius_ = T(1);
  Vec3<T> background_ = Vec3<T>(0, 0, 0);

  GaussianCloud<T> cloud_;
  MediumNet<T> net_;
  std::optional<CloudOptimizer<T>> cloud_opt_;
  std::optional<MediumOptimizer<T>> med_opt_;
  std::mt19937_64 rng_;

  std::vector<Image<T>> targets_;
  std::vector<Image<T>> depths_;
  T t_eps_ = kInitialTEps<T>;
  std::vector<std::size_t> deck_;
  std::size_t deck_pos_ = 0;

  RasterScratch<T> scratch_uw_;
  RasterScratch<T> scratch_clean_;
  CloudGrads<T> cg_;

  RunStats stats_;
  std::vector<TrainLogRow> log_;
};

} // namespace uwsplat
