#pragma once

#include <png.h>

#include <cmath>
#include <cstdio>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "d2h/tensor.hpp"

namespace d2h {

/// 8-bit RGB or grayscale PNG -> float tensor in [0,1] (v / 255).
/// Palette and 16-bit files are rejected.
inline TensorF read_png(const std::string& path) {
  std::unique_ptr<FILE, int (*)(FILE*)> fp(std::fopen(path.c_str(), "rb"), std::fclose);
  if (!fp) throw std::runtime_error("read_png: cannot open " + path);
  png_byte sig[8];
  if (std::fread(sig, 1, 8, fp.get()) != 8 || png_sig_cmp(sig, 0, 8))
    throw std::runtime_error("read_png: not a PNG file: " + path);

  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw std::runtime_error("read_png: decode error in " + path);
  }
  png_init_io(png, fp.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);

  int bit_depth = png_get_bit_depth(png, info);
  int color_type = png_get_color_type(png, info);
  if (bit_depth != 8 || (color_type != PNG_COLOR_TYPE_RGB &&
                         color_type != PNG_COLOR_TYPE_GRAY &&
                         color_type != PNG_COLOR_TYPE_RGBA)) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw std::runtime_error("read_png: unsupported format (need 8-bit RGB/gray): " + path);
  }
  if (color_type == PNG_COLOR_TYPE_RGBA) png_set_strip_alpha(png);

  int w = static_cast<int>(png_get_image_width(png, info));
  int h = static_cast<int>(png_get_image_height(png, info));
  int ch = color_type == PNG_COLOR_TYPE_GRAY ? 1 : 3;
  std::vector<png_byte> row(static_cast<size_t>(w) * ch);
  TensorF out(1, ch, h, w);
  for (int y = 0; y < h; ++y) {
    png_read_row(png, row.data(), nullptr);
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < ch; ++c)
        out.at(0, c, y, x) = static_cast<float>(row[x * ch + c]) / 255.0f;
  }
  png_destroy_read_struct(&png, &info, nullptr);
  return out;
}

/// Quantizes round(clamp(v,0,1)*255) and writes an 8-bit PNG (1 or 3 channel).
inline void write_png(const std::string& path, const TensorF& img) {
  require(img.n == 1 && (img.c == 1 || img.c == 3),
          "write_png: need 1x{1,3}xHxW, got " + img.shape_str());
  std::unique_ptr<FILE, int (*)(FILE*)> fp(std::fopen(path.c_str(), "wb"), std::fclose);
  if (!fp) throw std::runtime_error("write_png: cannot open " + path);
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw std::runtime_error("write_png: encode error for " + path);
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, img.w, img.h, 8,
               img.c == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  std::vector<png_byte> row(static_cast<size_t>(img.w) * img.c);
  for (int y = 0; y < img.h; ++y) {
    for (int x = 0; x < img.w; ++x)
      for (int c = 0; c < img.c; ++c) {
        float v = img.at(0, c, y, x);
        v = v < 0.f ? 0.f : (v > 1.f ? 1.f : v);
        row[x * img.c + c] = static_cast<png_byte>(std::lround(v * 255.0f));
      }
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

}  // namespace d2h
