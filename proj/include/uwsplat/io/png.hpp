// Copyright Contributors to the uwsplat Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "uwsplat/common.hpp"
#include "uwsplat/image.hpp"

#include <png.h>

#include <cstdio>
#include <memory>
#include <string>
#include <vector>

namespace uwsplat {

namespace detail {

struct FileCloser {
  void operator()(std::FILE *f) const {
    if (f)
      std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

inline FilePtr open_file(const std::string &path, const char *mode,
                         ErrorCode on_fail) {
  FilePtr f(std::fopen(path.c_str(), mode));
  if (!f)
    fail(on_fail, "cannot open '" + path + "'");
  return f;
}

// libpng reports errors via longjmp; keep row buffers outside the jump so
// nothing with a destructor is live when it fires
struct PngReader {
  png_structp png = nullptr;
  png_infop info = nullptr;
  ~PngReader() {
    if (png)
      png_destroy_read_struct(&png, info ? &info : nullptr, nullptr);
  }
};

struct PngWriter {
  png_structp png = nullptr;
  png_infop info = nullptr;
  ~PngWriter() {
    if (png)
      png_destroy_write_struct(&png, info ? &info : nullptr);
  }
};

} // namespace detail

/// 8-bit RGB loader; palette, grayscale, alpha, and 16-bit inputs are
/// folded down to RGB. Values land in [0, 1].
inline ImageF load_png_rgb(const std::string &path) {
  auto file = detail::open_file(path, "rb", ErrorCode::UnreadableFile);
  detail::PngReader r;
  r.png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr,
                                 nullptr);
  if (r.png)
    r.info = png_create_info_struct(r.png);
  if (!r.png || !r.info)
    fail(ErrorCode::IoError, "libpng init failed");

  std::vector<png_byte> pixels;
  std::vector<png_bytep> rows;
  if (setjmp(png_jmpbuf(r.png)))
    fail(ErrorCode::UnreadableFile, "corrupt PNG '" + path + "'");

  png_init_io(r.png, file.get());
  png_read_info(r.png, r.info);
  png_set_expand(r.png);
  png_set_strip_16(r.png);
  png_set_strip_alpha(r.png);
  png_set_gray_to_rgb(r.png);
  png_read_update_info(r.png, r.info);

  const png_uint_32 w = png_get_image_width(r.png, r.info);
  const png_uint_32 h = png_get_image_height(r.png, r.info);
  if (png_get_channels(r.png, r.info) != 3)
    fail(ErrorCode::UnreadableFile, "unexpected channel count in '" + path + "'");

  pixels.resize(std::size_t(w) * h * 3);
  rows.resize(h);
  for (png_uint_32 y = 0; y < h; ++y)
    rows[y] = pixels.data() + std::size_t(y) * w * 3;
  png_read_image(r.png, rows.data());
  png_read_end(r.png, nullptr);

  ImageF out(int(h), int(w), 3);
  for (png_uint_32 y = 0; y < h; ++y)
    for (png_uint_32 x = 0; x < w; ++x)
      for (int ch = 0; ch < 3; ++ch)
        out.at(int(y), int(x), ch) =
            float(pixels[(std::size_t(y) * w + x) * 3 + ch]) / 255.0f;
  return out;
}

/// 16-bit grayscale loader returning raw sample values (0..65535); 8-bit
/// inputs are upscaled by 257 so the range endpoints coincide.
inline ImageF load_png_gray16(const std::string &path) {
  auto file = detail::open_file(path, "rb", ErrorCode::UnreadableFile);
  detail::PngReader r;
  r.png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr,
                                 nullptr);
  if (r.png)
    r.info = png_create_info_struct(r.png);
  if (!r.png || !r.info)
    fail(ErrorCode::IoError, "libpng init failed");

  std::vector<png_byte> bytes;
  std::vector<png_bytep> rows;
  if (setjmp(png_jmpbuf(r.png)))
    fail(ErrorCode::UnreadableFile, "corrupt PNG '" + path + "'");

  png_init_io(r.png, file.get());
  png_read_info(r.png, r.info);
  if (png_get_color_type(r.png, r.info) != PNG_COLOR_TYPE_GRAY)
    fail(ErrorCode::UnreadableFile, "'" + path + "' is not grayscale");
  const int depth = png_get_bit_depth(r.png, r.info);
  if (depth < 8)
    png_set_expand_gray_1_2_4_to_8(r.png);
  png_read_update_info(r.png, r.info);

  const png_uint_32 w = png_get_image_width(r.png, r.info);
  const png_uint_32 h = png_get_image_height(r.png, r.info);
  const std::size_t stride = std::size_t(w) * (depth == 16 ? 2 : 1);
  bytes.resize(stride * h);
  rows.resize(h);
  for (png_uint_32 y = 0; y < h; ++y)
    rows[y] = bytes.data() + y * stride;
  png_read_image(r.png, rows.data());
  png_read_end(r.png, nullptr);

  ImageF out(int(h), int(w), 1);
  for (png_uint_32 y = 0; y < h; ++y)
    for (png_uint_32 x = 0; x < w; ++x) {
      if (depth == 16) {
        const png_byte hi = bytes[y * stride + 2 * x];
        const png_byte lo = bytes[y * stride + 2 * x + 1];
        out.at(int(y), int(x)) = float((unsigned(hi) << 8) | lo);
      } else {
        out.at(int(y), int(x)) = float(bytes[y * stride + x]) * 257.0f;
      }
    }
  return out;
}

template <typename T>
void save_png_rgb(const std::string &path, const Image<T> &img) {
  if (img.channels() != 3)
    fail(ErrorCode::ShapeMismatch, "save_png_rgb: need 3 channels");
  auto file = detail::open_file(path, "wb", ErrorCode::IoError);
  detail::PngWriter w;
  w.png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr,
                                  nullptr);
  if (w.png)
    w.info = png_create_info_struct(w.png);
  if (!w.png || !w.info)
    fail(ErrorCode::IoError, "libpng init failed");

  std::vector<png_byte> pixels(std::size_t(img.width()) * img.height() * 3);
  std::vector<png_bytep> rows(img.height());
  for (int y = 0; y < img.height(); ++y) {
    rows[y] = pixels.data() + std::size_t(y) * img.width() * 3;
    for (int x = 0; x < img.width(); ++x)
      for (int ch = 0; ch < 3; ++ch) {
        const T v = std::clamp(img.at(y, x, ch), T(0), T(1));
        rows[y][3 * x + ch] = png_byte(std::lround(double(v) * 255.0));
      }
  }
  if (setjmp(png_jmpbuf(w.png)))
    fail(ErrorCode::IoError, "PNG write failed for '" + path + "'");
  png_init_io(w.png, file.get());
  png_set_IHDR(w.png, w.info, png_uint_32(img.width()),
               png_uint_32(img.height()), 8, PNG_COLOR_TYPE_RGB,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(w.png, w.info);
  png_write_image(w.png, rows.data());
  png_write_end(w.png, nullptr);
}

/// Writes a [0,1] map as 16-bit grayscale (big-endian samples per spec).
template <typename T>
void save_png_gray16(const std::string &path, const Image<T> &img) {
  if (img.channels() != 1)
    fail(ErrorCode::ShapeMismatch, "save_png_gray16: need 1 channel");
  auto file = detail::open_file(path, "wb", ErrorCode::IoError);
  detail::PngWriter w;
  w.png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr,
                                  nullptr);
  if (w.png)
    w.info = png_create_info_struct(w.png);
  if (!w.png || !w.info)
    fail(ErrorCode::IoError, "libpng init failed");

  const std::size_t stride = std::size_t(img.width()) * 2;
  std::vector<png_byte> bytes(stride * img.height());
  std::vector<png_bytep> rows(img.height());
  for (int y = 0; y < img.height(); ++y) {
    rows[y] = bytes.data() + y * stride;
    for (int x = 0; x < img.width(); ++x) {
      const T v = std::clamp(img.at(y, x), T(0), T(1));
      const auto s = unsigned(std::lround(double(v) * 65535.0));
      rows[y][2 * x] = png_byte(s >> 8);
      rows[y][2 * x + 1] = png_byte(s & 0xff);
    }
  }
  if (setjmp(png_jmpbuf(w.png)))
    fail(ErrorCode::IoError, "PNG write failed for '" + path + "'");
  png_init_io(w.png, file.get());
  png_set_IHDR(w.png, w.info, png_uint_32(img.width()),
               png_uint_32(img.height()), 16, PNG_COLOR_TYPE_GRAY,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(w.png, w.info);
  png_write_image(w.png, rows.data());
  png_write_end(w.png, nullptr);
}

/// Writes a binary mask as a true 1-bit grayscale PNG.
inline void save_png_mask(const std::string &path, const Mask &mask) {
  auto file = detail::open_file(path, "wb", ErrorCode::IoError);
  detail::PngWriter w;
  w.png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr,
                                  nullptr);
  if (w.png)
    w.info = png_create_info_struct(w.png);
  if (!w.png || !w.info)
    fail(ErrorCode::IoError, "libpng init failed");

  const std::size_t stride = (std::size_t(mask.width()) + 7) / 8;
  std::vector<png_byte> bytes(stride * mask.height(), 0);
  std::vector<png_bytep> rows(mask.height());
  for (int y = 0; y < mask.height(); ++y) {
    rows[y] = bytes.data() + y * stride;
    for (int x = 0; x < mask.width(); ++x)
      if (mask.at(y, x))
        rows[y][x / 8] |= png_byte(0x80u >> (x % 8));
  }
  if (setjmp(png_jmpbuf(w.png)))
    fail(ErrorCode::IoError, "PNG write failed for '" + path + "'");
  png_init_io(w.png, file.get());
  png_set_IHDR(w.png, w.info, png_uint_32(mask.width()),
               png_uint_32(mask.height()), 1, PNG_COLOR_TYPE_GRAY,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(w.png, w.info);
  png_write_image(w.png, rows.data());
  png_write_end(w.png, nullptr);
}

/// Reads a mask back from any grayscale PNG: nonzero means set.
inline Mask load_png_mask(const std::string &path) {
  ImageF g = load_png_gray16(path);
  Mask out(g.height(), g.width(), 1);
  for (std::size_t i = 0; i < g.size(); ++i)
    out.data()[i] = g.data()[i] > 0 ? 1 : 0;
  return out;
}

} // namespace uwsplat
