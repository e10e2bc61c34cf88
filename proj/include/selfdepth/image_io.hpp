#pragma once

#include <png.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <limits>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "selfdepth/geometry.hpp"

namespace selfdepth {

/// Writes a [3,H,W] image with values in [0,1] as 8-bit RGB.
template <typename T>
void write_png(const std::string& path, const Tensor<T>& image) {
  if (image.ndim() != 3 || image.dim(0) != 3) {
    throw ShapeError("write_png: expected [3,H,W], got " + shape_str(image.shape()));
  }
  const std::size_t h = image.dim(1), w = image.dim(2);
  std::vector<png_byte> rows(h * w * 3);
  for (std::size_t c = 0; c < 3; ++c) {
    for (std::size_t p = 0; p < h * w; ++p) {
      double v = std::clamp(static_cast<double>(image[c * h * w + p]), 0.0, 1.0);
      rows[p * 3 + c] = static_cast<png_byte>(std::lround(v * 255.0));
    }
  }
  std::unique_ptr<FILE, int (*)(FILE*)> fp(std::fopen(path.c_str(), "wb"), &std::fclose);
  if (!fp) throw std::runtime_error("cannot write image " + path);
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw std::runtime_error("libpng initialisation failed for " + path);
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw std::runtime_error("failed writing image " + path);
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h), 8,
               PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (std::size_t y = 0; y < h; ++y) png_write_row(png, rows.data() + y * w * 3);
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

/// Reads any 8/16-bit PNG as a [3,H,W] image in [0,1].
template <typename T>
Tensor<T> read_png(const std::string& path) {
  std::unique_ptr<FILE, int (*)(FILE*)> fp(std::fopen(path.c_str(), "rb"), &std::fclose);
  if (!fp) throw std::runtime_error("cannot open image " + path);
  png_byte sig[8];
  if (std::fread(sig, 1, 8, fp.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0) {
    throw std::runtime_error("not a PNG file: " + path);
  }
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw std::runtime_error("libpng initialisation failed for " + path);
  }
  std::vector<png_byte> buf;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw std::runtime_error("failed reading image " + path);
  }
  png_init_io(png, fp.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);
  png_set_strip_16(png);
  png_set_palette_to_rgb(png);
  png_set_expand_gray_1_2_4_to_8(png);
  png_set_gray_to_rgb(png);
  png_set_strip_alpha(png);
  png_read_update_info(png, info);
  const std::size_t w = png_get_image_width(png, info), h = png_get_image_height(png, info);
  const std::size_t rowbytes = png_get_rowbytes(png, info);
  if (rowbytes != w * 3) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw std::runtime_error("unsupported PNG layout in " + path);
  }
  buf.resize(h * rowbytes);
  std::vector<png_bytep> rows(h);
  for (std::size_t y = 0; y < h; ++y) rows[y] = buf.data() + y * rowbytes;
  png_read_image(png, rows.data());
  png_destroy_read_struct(&png, &info, nullptr);
  std::vector<T> out(3 * h * w);
  for (std::size_t c = 0; c < 3; ++c) {
    for (std::size_t p = 0; p < h * w; ++p) {
      out[c * h * w + p] = static_cast<T>(buf[p * 3 + c] / 255.0);
    }
  }
  return Tensor<T>({3, h, w}, std::move(out));
}

/// "H W\n" header then H*W little-endian float32 values; NaN marks invalid.
template <typename T>
void write_depth_bin(const std::string& path, const DepthMap<T>& depth) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write depth file " + path);
  const std::size_t h = depth.height(), w = depth.width();
  os << h << ' ' << w << '\n';
  std::vector<char> bytes(4 * h * w);
  for (std::size_t i = 0; i < h * w; ++i) {
    float f = depth.valid.values.empty() || depth.valid[i]
                  ? static_cast<float>(depth.values[i])
                  : std::numeric_limits<float>::quiet_NaN();
    auto u = std::bit_cast<std::uint32_t>(f);
    for (int k = 0; k < 4; ++k) bytes[4 * i + k] = static_cast<char>(u >> (8 * k));
  }
  os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw std::runtime_error("failed writing depth file " + path);
}

template <typename T>
DepthMap<T> read_depth_bin(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open depth file " + path);
  std::size_t h = 0, w = 0;
  if (!(is >> h >> w) || is.get() != '\n' || h == 0 || w == 0) {
    throw std::runtime_error("malformed depth header in " + path + " (expected \"H W\\n\")");
  }
  std::vector<char> bytes(4 * h * w);
  is.read(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (is.gcount() != static_cast<std::streamsize>(bytes.size())) {
    throw std::runtime_error("truncated depth file " + path);
  }
  std::vector<T> v(h * w);
  Mask valid(h, w, false);
  for (std::size_t i = 0; i < h * w; ++i) {
    std::uint32_t u = 0;
    for (int k = 0; k < 4; ++k) {
      u |= std::uint32_t{static_cast<unsigned char>(bytes[4 * i + k])} << (8 * k);
    }
    float f = std::bit_cast<float>(u);
    valid.values[i] = std::isfinite(f) && f > 0;
    v[i] = static_cast<T>(f);
  }
  return {Tensor<T>({h, w}, std::move(v)), std::move(valid)};
}

/// 2x2 box downsampling of the last two axes (both extents must be even).
template <typename T>
Tensor<T> downsample2x(const Tensor<T>& x) {
  Shape s = x.shape();
  std::size_t h = s[s.size() - 2], w = s.back();
  if (h % 2 || w % 2) throw ShapeError("downsample2x: odd extent in " + shape_str(s));
  std::size_t planes = x.numel() / (h * w), ho = h / 2, wo = w / 2;
  std::vector<T> out(planes * ho * wo);
  for (std::size_t p = 0; p < planes; ++p) {
    for (std::size_t y = 0; y < ho; ++y) {
      for (std::size_t u = 0; u < wo; ++u) {
        const T* src = x.values().data() + p * h * w;
        out[(p * ho + y) * wo + u] =
            (src[2 * y * w + 2 * u] + src[2 * y * w + 2 * u + 1] +
             src[(2 * y + 1) * w + 2 * u] + src[(2 * y + 1) * w + 2 * u + 1]) /
            T{4};
      }
    }
  }
  s[s.size() - 2] = ho;
  s.back() = wo;
  return Tensor<T>(std::move(s), std::move(out));
}

}  // namespace selfdepth
