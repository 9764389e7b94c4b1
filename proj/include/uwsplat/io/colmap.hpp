// Copyright Contributors to the uwsplat Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "uwsplat/io/png.hpp"
#include "uwsplat/scene.hpp"

#include <algorithm>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

namespace uwsplat {

namespace detail {

inline std::vector<std::string> read_content_lines(const std::string &path) {
  std::ifstream in(path);
  if (!in)
    fail(ErrorCode::MissingFile, "cannot open '" + path + "'");
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r')
      line.pop_back();
    lines.push_back(line);
  }
  return lines;
}

inline bool blank_or_comment(const std::string &line) {
  const auto pos = line.find_first_not_of(" \t");
  return pos == std::string::npos || line[pos] == '#';
}

[[noreturn]] inline void malformed(const std::string &file, std::size_t line_no,
                                   const std::string &what) {
  fail(ErrorCode::MalformedLine,
       file + ":" + std::to_string(line_no) + ": " + what);
}

} // namespace detail

/// Relative depth map from a 16-bit grayscale PNG or a raw little-endian
/// float32 plane; min-max normalized to [0,1] at load time (constant maps
/// normalize to zero).
inline ImageF load_depth_map(const std::string &path, int width, int height) {
  ImageF img;
  if (path.size() >= 4 && path.substr(path.size() - 4) == ".png") {
    img = load_png_gray16(path);
    if (img.width() != width || img.height() != height)
      fail(ErrorCode::SizeMismatch, "depth map '" + path +
                                        "' does not match the view size");
  } else {
    std::ifstream in(path, std::ios::binary);
    if (!in)
      fail(ErrorCode::UnreadableFile, "cannot open '" + path + "'");
    in.seekg(0, std::ios::end);
    const auto bytes = std::size_t(in.tellg());
    if (bytes != std::size_t(width) * height * 4)
      fail(ErrorCode::SizeMismatch, "raw depth '" + path +
                                        "' has the wrong byte count");
    in.seekg(0);
    img = ImageF(height, width, 1);
    in.read(reinterpret_cast<char *>(img.data().data()),
            std::streamsize(bytes));
    if (!in)
      fail(ErrorCode::UnreadableFile, "short read on '" + path + "'");
  }
  minmax_normalize(img.data());
  return img;
}

inline std::map<int, Camera> parse_cameras_txt(const std::string &path) {
  std::map<int, Camera> cams;
  const auto lines = detail::read_content_lines(path);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (detail::blank_or_comment(lines[i]))
      continue;
    std::istringstream ss(lines[i]);
    int id = 0, width = 0, height = 0;
    std::string model;
    if (!(ss >> id >> model >> width >> height))
      detail::malformed(path, i + 1, "expected ID MODEL WIDTH HEIGHT");
    Camera cam;
    cam.id = id;
    cam.width = width;
    cam.height = height;
    if (model == "PINHOLE") {
      if (!(ss >> cam.fx >> cam.fy >> cam.cx >> cam.cy))
        detail::malformed(path, i + 1, "PINHOLE needs fx fy cx cy");
    } else if (model == "SIMPLE_PINHOLE") {
      double f = 0;
      if (!(ss >> f >> cam.cx >> cam.cy))
        detail::malformed(path, i + 1, "SIMPLE_PINHOLE needs f cx cy");
      cam.fx = cam.fy = f;
    } else {
      fail(ErrorCode::UnsupportedCameraModel,
           path + ": camera model '" + model + "' is not supported");
    }
    cam.validate();
    cams[id] = cam;
  }
  return cams;
}

struct ColmapImageEntry {
  int image_id = 0, camera_id = 0;
  Quat<double> rotation = Quat<double>::Identity();
  Vec3<double> translation = Vec3<double>::Zero();
  std::string name;
};

inline std::vector<ColmapImageEntry>
parse_images_txt(const std::string &path) {
  std::vector<ColmapImageEntry> entries;
  const auto lines = detail::read_content_lines(path);
  bool expect_points_line = false;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (expect_points_line) { // 2D observations; unused here
      expect_points_line = false;
      continue;
    }
    if (detail::blank_or_comment(lines[i]))
      continue;
    std::istringstream ss(lines[i]);
    ColmapImageEntry e;
    double qw = 0, qx = 0, qy = 0, qz = 0;
    if (!(ss >> e.image_id >> qw >> qx >> qy >> qz >> e.translation.x() >>
          e.translation.y() >> e.translation.z() >> e.camera_id >> e.name))
      detail::malformed(path, i + 1,
                        "expected ID QW QX QY QZ TX TY TZ CAM_ID NAME");
    e.rotation = Quat<double>(qw, qx, qy, qz);
    if (std::abs(e.rotation.norm() - 1.0) > 1e-6)
      detail::malformed(path, i + 1, "quaternion is not unit-norm");
    e.rotation.normalize();
    entries.push_back(e);
    expect_points_line = true;
  }
  return entries;
}

inline std::vector<InitPoint> parse_points3d_txt(const std::string &path) {
  std::vector<InitPoint> points;
  const auto lines = detail::read_content_lines(path);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (detail::blank_or_comment(lines[i]))
      continue;
    std::istringstream ss(lines[i]);
    long id = 0;
    InitPoint p;
    int r = 0, g = 0, b = 0;
    double err = 0;
    if (!(ss >> id >> p.position.x() >> p.position.y() >> p.position.z() >>
          r >> g >> b >> err))
      detail::malformed(path, i + 1, "expected ID X Y Z R G B ERROR");
    p.color = Vec3<double>(r, g, b) / 255.0;
    points.push_back(p);
  }
  return points;
}

/// Loads a COLMAP sparse-text scene directory:
///   cameras.txt, images.txt, points3D.txt, images/<name>,
///   optional depths/<stem>.png (16-bit) or depths/<stem>.f32.
inline SceneBundle load_colmap(const std::string &dir) {
  namespace fs = std::filesystem;
  SceneBundle bundle;
  bundle.intrinsics = parse_cameras_txt(dir + "/cameras.txt");
  auto entries = parse_images_txt(dir + "/images.txt");
  bundle.init_points = parse_points3d_txt(dir + "/points3D.txt");
  if (bundle.init_points.empty())
    fail(ErrorCode::MissingInitialPoints, dir + "/points3D.txt is empty");

  std::sort(entries.begin(), entries.end(),
            [](const auto &a, const auto &b) { return a.name < b.name; });

  for (const auto &e : entries) {
    auto it = bundle.intrinsics.find(e.camera_id);
    if (it == bundle.intrinsics.end())
      fail(ErrorCode::MalformedLine,
           dir + "/images.txt: image '" + e.name + "' references camera " +
               std::to_string(e.camera_id) + " which does not exist");
    View v;
    v.intrinsics_id = e.camera_id;
    v.name = e.name;
    v.camera = it->second;
    v.camera.rotation = e.rotation;
    v.camera.translation = e.translation;
    v.image = load_png_rgb(dir + "/images/" + e.name);
    if (v.image.width() != it->second.width ||
        v.image.height() != it->second.height)
      fail(ErrorCode::SizeMismatch,
           "image '" + e.name + "' does not match its camera size");

    const std::string stem = fs::path(e.name).stem().string();
    for (const std::string &cand :
         {dir + "/depths/" + stem + ".png", dir + "/depths/" + stem + ".f32"})
      if (fs::exists(cand)) {
        v.depth = load_depth_map(cand, it->second.width, it->second.height);
        break;
      }
    bundle.views.push_back(std::move(v));
  }
  bundle.make_split();
  bundle.validate();
  return bundle;
}

/// Writes the three sparse-text files (not the images) for round-trips and
/// synthetic scene generation.
inline void save_colmap_text(const std::string &dir, const SceneBundle &bundle) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  {
    std::ofstream out(dir + "/cameras.txt");
    if (!out)
      fail(ErrorCode::IoError, "cannot write cameras.txt");
    out << "# CAMERA_ID MODEL WIDTH HEIGHT PARAMS\n";
    out.precision(17);
    for (const auto &[id, cam] : bundle.intrinsics)
      out << id << " PINHOLE " << cam.width << " " << cam.height << " "
          << cam.fx << " " << cam.fy << " " << cam.cx << " " << cam.cy
          << "\n";
  }
  {
    std::ofstream out(dir + "/images.txt");
    if (!out)
      fail(ErrorCode::IoError, "cannot write images.txt");
    out << "# IMAGE_ID QW QX QY QZ TX TY TZ CAMERA_ID NAME\n";
    int next_id = 1;
    out.precision(17);
    for (const auto &v : bundle.views) {
      const Camera &cam = v.camera;
      out << next_id++ << " " << cam.rotation.w() << " " << cam.rotation.x()
          << " " << cam.rotation.y() << " " << cam.rotation.z() << " "
          << cam.translation.x() << " " << cam.translation.y() << " "
          << cam.translation.z() << " " << v.intrinsics_id << " " << v.name
          << "\n\n"; // empty 2D-observations line
    }
  }
  {
    std::ofstream out(dir + "/points3D.txt");
    if (!out)
      fail(ErrorCode::IoError, "cannot write points3D.txt");
    out << "# POINT3D_ID X Y Z R G B ERROR\n";
    out.precision(17);
    long id = 1;
    for (const auto &p : bundle.init_points) {
      const auto c = (p.color * 255.0).array().round().cast<int>();
      out << id++ << " " << p.position.x() << " " << p.position.y() << " "
          << p.position.z() << " " << c[0] << " " << c[1] << " " << c[2]
          << " 0\n";
    }
  }
}

} // namespace uwsplat
