// Copyright Contributors to the uwsplat Project
// SPDX-License-Identifier: Apache-2.0
//
// Command-line front end: scene synthesis, training, rendering (watered
// and restored), motion-mask extraction, and held-out evaluation.

#include "uwsplat/io/checkpoint.hpp"
#include "uwsplat/io/colmap.hpp"
#include "uwsplat/io/config.hpp"
#include "uwsplat/io/png.hpp"
#include "uwsplat/synth.hpp"
#include "uwsplat/trainer.hpp"

#include <CLI11.hpp>

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <limits>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using namespace uwsplat;

namespace {

constexpr std::int64_t kSeedUnset = std::numeric_limits<std::int64_t>::min();

struct CommonOpts {
  std::string config_path;
  std::string out;
  std::string scene;
  std::string checkpoint;
  std::string masks_dir;
  std::int64_t seed = kSeedUnset;
  int threads = 0; // 0: keep the config value
  bool v1 = false, v2 = false, v3 = false;
  bool dynamic = false;
  bool all_views = false;
};

KeyValueConfig load_kv(const std::string &path) {
  if (path.empty())
    return KeyValueConfig::from_string("", "<empty>");
  return KeyValueConfig::from_file(path);
}

void add_common(CLI::App *cmd, CommonOpts &o, bool with_ablations = true) {
  cmd->add_option("--config", o.config_path,
                  "key=value configuration file");
  cmd->add_option("--seed", o.seed, "override the configured RNG seed");
  cmd->add_option("--threads", o.threads, "worker threads (1 = bit-exact)");
  if (with_ablations) {
    cmd->add_flag("--v1", o.v1, "ablation: no water model");
    cmd->add_flag("--v2", o.v2, "ablation: no physics density control");
    cmd->add_flag("--v3", o.v3, "ablation: no depth supervision");
    cmd->add_flag("--dynamic", o.dynamic, "enable motion masking");
  }
}

TrainConfig train_config_from(const CommonOpts &o, KeyValueConfig &kv) {
  TrainConfig cfg = TrainConfig::from_config(kv);
  kv.reject_unknown_keys();
  if (o.seed != kSeedUnset)
    cfg.seed = std::uint64_t(o.seed);
  if (o.threads > 0)
    cfg.threads = o.threads;
  cfg.disable_medium |= o.v1;
  cfg.disable_physics_dc |= o.v2;
  cfg.disable_depth_loss |= o.v3;
  cfg.dynamic |= o.dynamic;
  return cfg;
}

SynthSceneSpec synth_spec_from(const CommonOpts &o, KeyValueConfig &kv) {
  SynthSceneSpec s;
  s.seed = std::uint64_t(kv.get_int("seed", std::int64_t(s.seed)));
  s.n_gaussians = int(kv.get_int("n_gaussians", s.n_gaussians));
  s.n_views = int(kv.get_int("n_views", s.n_views));
  s.width = int(kv.get_int("width", s.width));
  s.height = int(kv.get_int("height", s.height));
  s.focal = kv.get_double("focal", s.focal);
  s.ring_radius = kv.get_double("ring_radius", s.ring_radius);
  s.ring_distance = kv.get_double("ring_distance", s.ring_distance);
  s.dolly = kv.get_double("dolly", s.dolly);
  const char *axes = "xyz";
  for (int a = 0; a < 3; ++a) {
    const std::string suf(1, axes[a]);
    s.volume_center[a] =
        kv.get_double("volume_center_" + suf, s.volume_center[a]);
    s.volume_half[a] = kv.get_double("volume_half_" + suf, s.volume_half[a]);
  }
  const char *chans = "rgb";
  for (int c = 0; c < 3; ++c) {
    const std::string suf(1, chans[c]);
    s.beta_d[c] = kv.get_double("beta_d_" + suf, s.beta_d[c]);
    s.beta_b[c] = kv.get_double("beta_b_" + suf, s.beta_b[c]);
    s.b[c] = kv.get_double("b_" + suf, s.b[c]);
  }
  s.with_distractor = kv.get_bool("with_distractor", s.with_distractor);
  s.distractor.size_px =
      int(kv.get_int("distractor_size", s.distractor.size_px));
  s.distractor.view_fraction =
      kv.get_double("distractor_frac", s.distractor.view_fraction);
  kv.reject_unknown_keys();
  if (o.seed != kSeedUnset)
    s.seed = std::uint64_t(o.seed);
  return s;
}

SceneBundle load_scene(const std::string &dir) {
  SceneBundle bundle = load_colmap(dir);
  if (bundle.train_idx.empty() && bundle.test_idx.empty())
    bundle.make_split();
  return bundle;
}

std::string stem_of(const std::string &name) {
  return fs::path(name).stem().string();
}

int run_synth(const CommonOpts &o) {
  KeyValueConfig kv = load_kv(o.config_path);
  SynthSceneSpec spec = synth_spec_from(o, kv);
  auto res = generate_synth_scene(spec);
  write_synth_scene(o.out, res);
  std::cout << "synth: wrote " << res.bundle.views.size() << " views ("
            << res.bundle.train_idx.size() << " train / "
            << res.bundle.test_idx.size() << " test), "
            << res.bundle.init_points.size() << " points to " << o.out
            << "\n";
  return 0;
}

int run_train(const CommonOpts &o) {
  KeyValueConfig kv = load_kv(o.config_path);
  TrainConfig cfg = train_config_from(o, kv);
  SceneBundle bundle = load_scene(o.scene);

  Trainer<double> trainer(std::move(bundle), cfg);
  auto res = trainer.train();

  fs::create_directories(o.out);
  save_checkpoint((fs::path(o.out) / "checkpoint").string(), res.checkpoint);
  write_train_log((fs::path(o.out) / "train_log.csv").string(), res.log);

  std::cout << "train: " << res.stats.iterations_run << " iterations, "
            << res.checkpoint.cloud.size() << " gaussians, "
            << res.stats.densify_events << " density events\n";
  if (!res.log.empty())
    std::cout << "train: final loss " << res.log.back().total << "\n";
  std::cout << "train: checkpoint written to "
            << (fs::path(o.out) / "checkpoint").string() << ".{ply,mlp}\n";
  return 0;
}

int run_render(const CommonOpts &o, RenderMode mode) {
  KeyValueConfig kv = load_kv(o.config_path);
  Vec3<double> bg(kv.get_double("background_r", 0),
                  kv.get_double("background_g", 0),
                  kv.get_double("background_b", 0));
  SceneBundle bundle = load_scene(o.scene);
  auto ckpt = load_checkpoint<double>(o.checkpoint);
  const double radius = bundle.scene_radius();
  const int threads = o.threads > 0 ? o.threads : 1;
  const RenderMode m = o.v1 ? RenderMode::Clean : mode;

  std::vector<std::size_t> ids = o.all_views
                                     ? std::vector<std::size_t>{}
                                     : bundle.test_idx;
  if (o.all_views)
    for (std::size_t i = 0; i < bundle.views.size(); ++i)
      ids.push_back(i);

  fs::create_directories(o.out);
  for (std::size_t vid : ids) {
    const View &v = bundle.views[vid];
    auto r = render_scene_view(ckpt.cloud, ckpt.net, v.camera, m, bg, radius,
                               threads);
    const std::string stem = stem_of(v.name);
    save_png_rgb((fs::path(o.out) / (stem + ".png")).string(), r.color);
    std::vector<double> depth = r.depth.data();
    minmax_normalize(depth);
    Image<double> dn(r.depth.height(), r.depth.width(), 1);
    dn.data() = depth;
    save_png_gray16((fs::path(o.out) / (stem + "_depth.png")).string(), dn);
  }
  std::cout << (mode == RenderMode::Clean ? "drain" : "render") << ": wrote "
            << ids.size() << " views to " << o.out << "\n";
  return 0;
}

int run_mask(const CommonOpts &o) {
  KeyValueConfig kv = load_kv(o.config_path);
  BmmConfig bmm;
  bmm.trim_quantile = kv.get_double("bmm_rho", bmm.trim_quantile);
  bmm.t_star = kv.get_double("bmm_t_star", bmm.t_star);
  bmm.t_r = kv.get_double("bmm_t_r", bmm.t_r);
  Vec3<double> bg(kv.get_double("background_r", 0),
                  kv.get_double("background_g", 0),
                  kv.get_double("background_b", 0));
  kv.reject_unknown_keys();

  SceneBundle bundle = load_scene(o.scene);
  auto ckpt = load_checkpoint<double>(o.checkpoint);
  const double radius = bundle.scene_radius();
  const int threads = o.threads > 0 ? o.threads : 1;

  fs::create_directories(o.out);
  double t_eps = kInitialTEps<double>;
  for (std::size_t vid : bundle.train_idx) {
    const View &v = bundle.views[vid];
    auto r = render_scene_view(ckpt.cloud, ckpt.net, v.camera,
                               o.v1 ? RenderMode::Clean
                                    : RenderMode::Underwater,
                               bg, radius, threads);
    const Image<double> target = v.image.cast<double>();
    auto mm = compute_motion_mask(r.color, target, t_eps, bmm);
    t_eps = mm.next_t_eps;
    save_png_mask((fs::path(o.out) / (stem_of(v.name) + ".png")).string(),
                  mm.omega);
    std::size_t kept = 0;
    for (std::uint8_t px : mm.omega.data())
      kept += px != 0;
    std::cout << "mask: " << v.name << " inliers "
              << double(kept) / double(mm.omega.size()) << "\n";
  }
  return 0;
}

int run_eval(const CommonOpts &o) {
  KeyValueConfig kv = load_kv(o.config_path);
  Vec3<double> bg(kv.get_double("background_r", 0),
                  kv.get_double("background_g", 0),
                  kv.get_double("background_b", 0));
  kv.reject_unknown_keys();

  SceneBundle bundle = load_scene(o.scene);
  auto ckpt = load_checkpoint<double>(o.checkpoint);
  const double radius = bundle.scene_radius();
  const int threads = o.threads > 0 ? o.threads : 1;
  const RenderMode mode = o.v1 ? RenderMode::Clean : RenderMode::Underwater;

  std::ostringstream csv;
  csv << "view,psnr,ssim\n";
  double psnr_sum = 0, ssim_sum = 0;
  int counted = 0;
  for (std::size_t vid : bundle.test_idx) {
    const View &v = bundle.views[vid];
    std::vector<std::size_t> one{vid};
    std::vector<Mask> masks;
    const std::vector<Mask> *mask_ptr = nullptr;
    if (!o.masks_dir.empty()) {
      masks.push_back(load_png_mask(
          (fs::path(o.masks_dir) / (stem_of(v.name) + ".png")).string()));
      mask_ptr = &masks;
    }
    try {
      auto m = evaluate_views(ckpt.cloud, ckpt.net, bundle, one, mode, bg,
                              radius, mask_ptr, threads);
      csv << v.name << ',' << m[0].psnr << ',' << m[0].ssim << '\n';
      psnr_sum += m[0].psnr;
      ssim_sum += m[0].ssim;
      ++counted;
    } catch (const Error &e) {
      if (e.code() != ErrorCode::NoValidPixels)
        throw;
      csv << v.name << ",no-valid-pixels,no-valid-pixels\n";
    }
  }
  if (counted > 0)
    csv << "mean," << psnr_sum / counted << ',' << ssim_sum / counted << '\n';
  std::cout << csv.str();
  if (!o.out.empty()) {
    fs::create_directories(o.out);
    std::ofstream f(fs::path(o.out) / "metrics.csv");
    if (!f)
      fail(ErrorCode::IoError, "eval: cannot write metrics.csv");
    f << csv.str();
  }
  return 0;
}

} // namespace

int main(int argc, char **argv) {
  CLI::App app{"underwater gaussian splatting toolkit"};
  app.require_subcommand(1);
  CommonOpts o;

  CLI::App *synth = app.add_subcommand("synth", "generate a synthetic scene");
  add_common(synth, o, false);
  synth->add_option("--out", o.out, "output scene directory")->required();

  CLI::App *train = app.add_subcommand("train", "optimize a scene");
  add_common(train, o);
  train->add_option("--scene", o.scene, "input scene directory")->required();
  train->add_option("--out", o.out, "output directory")->required();

  CLI::App *render = app.add_subcommand("render", "render watered views");
  CLI::App *drain = app.add_subcommand("drain", "render restored views");
  for (CLI::App *cmd : {render, drain}) {
    add_common(cmd, o);
    cmd->add_option("--scene", o.scene, "scene directory (cameras)")
        ->required();
    cmd->add_option("--checkpoint", o.checkpoint,
                    "checkpoint base path (no extension)")
        ->required();
    cmd->add_option("--out", o.out, "output image directory")->required();
    cmd->add_flag("--all", o.all_views, "render every view, not just test");
  }

  CLI::App *mask = app.add_subcommand("mask", "extract motion masks");
  add_common(mask, o);
  mask->add_option("--scene", o.scene, "scene directory")->required();
  mask->add_option("--checkpoint", o.checkpoint, "checkpoint base path")
      ->required();
  mask->add_option("--out", o.out, "output mask directory")->required();

  CLI::App *eval = app.add_subcommand("eval", "held-out metrics");
  add_common(eval, o);
  eval->add_option("--scene", o.scene, "scene directory")->required();
  eval->add_option("--checkpoint", o.checkpoint, "checkpoint base path")
      ->required();
  eval->add_option("--out", o.out, "optional metrics output directory");
  eval->add_option("--masks", o.masks_dir,
                   "directory of per-view exclusion masks");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError &e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (synth->parsed())
      return run_synth(o);
    if (train->parsed())
      return run_train(o);
    if (render->parsed())
      return run_render(o, RenderMode::Underwater);
    if (drain->parsed())
      return run_render(o, RenderMode::Clean);
    if (mask->parsed())
      return run_mask(o);
    if (eval->parsed())
      return run_eval(o);
  } catch (const Error &e) {
    std::cerr << "error: " << e.what() << "\n";
    if (e.code() == ErrorCode::ConfigError)
      return 2;
    if (e.code() == ErrorCode::DivergedLoss)
      return 3;
    return 1;
  } catch (const std::exception &e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
