// Copyright 2026 The retinev Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <png.h>

#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "retinev/raster.hpp"

// PNG reading and writing through libpng. Files are taken to be gamma-encoded.

namespace retinev {

namespace detail {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

struct PngPixels {
  int width = 0;
  int height = 0;
  int channels = 0;
  int bit_depth = 0;
  std::vector<unsigned char> bytes;  // interleaved, big-endian samples for 16-bit
};

// Kept free of objects with destructors between setjmp and any longjmp.
inline bool png_read_raw(std::FILE* fp, PngPixels& out, std::string& err) {
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) {
    err = "png_create_read_struct failed";
    return false;
  }
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    err = "png_create_info_struct failed";
    return false;
  }
  std::vector<png_bytep>* rows = nullptr;
  if (setjmp(png_jmpbuf(png))) {
    delete rows;
    png_destroy_read_struct(&png, &info, nullptr);
    err = "libpng decode error";
    return false;
  }
  png_init_io(png, fp);
  png_read_info(png, info);
  const png_byte color = png_get_color_type(png, info);
  const png_byte depth = png_get_bit_depth(png, info);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  if (color & PNG_COLOR_MASK_ALPHA || png_get_valid(png, info, PNG_INFO_tRNS)) png_set_strip_alpha(png);
  png_read_update_info(png, info);

  out.width = static_cast<int>(png_get_image_width(png, info));
  out.height = static_cast<int>(png_get_image_height(png, info));
  out.bit_depth = png_get_bit_depth(png, info);
  out.channels = png_get_channels(png, info);
  const std::size_t stride = png_get_rowbytes(png, info);
  out.bytes.resize(stride * static_cast<std::size_t>(out.height));
  rows = new std::vector<png_bytep>(static_cast<std::size_t>(out.height));
  for (int y = 0; y < out.height; ++y) (*rows)[y] = out.bytes.data() + stride * static_cast<std::size_t>(y);
  png_read_image(png, rows->data());
  png_read_end(png, nullptr);
  delete rows;
  png_destroy_read_struct(&png, &info, nullptr);
  return true;
}

inline bool png_write_raw(std::FILE* fp, const PngPixels& px, std::string& err) {
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) {
    err = "png_create_write_struct failed";
    return false;
  }
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    err = "png_create_info_struct failed";
    return false;
  }
  std::vector<png_bytep>* rows = nullptr;
  if (setjmp(png_jmpbuf(png))) {
    delete rows;
    png_destroy_write_struct(&png, &info);
    err = "libpng encode error";
    return false;
  }
  png_init_io(png, fp);
  png_set_IHDR(png, info, static_cast<png_uint_32>(px.width), static_cast<png_uint_32>(px.height), px.bit_depth,
               px.channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  const std::size_t stride = static_cast<std::size_t>(px.width) * px.channels * (px.bit_depth / 8);
  rows = new std::vector<png_bytep>(static_cast<std::size_t>(px.height));
  for (int y = 0; y < px.height; ++y) {
    (*rows)[y] = const_cast<png_bytep>(px.bytes.data()) + stride * static_cast<std::size_t>(y);
  }
  png_write_image(png, rows->data());
  png_write_end(png, nullptr);
  delete rows;
  png_destroy_write_struct(&png, &info);
  return true;
}

}  // namespace detail

/// Reads an 8- or 16-bit PNG (gray or RGB; alpha and palettes are flattened)
/// as a gamma-encoded raster.
inline EncodedRaster load_image(const std::filesystem::path& path, double gamma = kDefaultGamma) {
  detail::FilePtr fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw IoError("cannot open image: " + path.string());
  unsigned char sig[8] = {};
  if (std::fread(sig, 1, 8, fp.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0) {
    throw IoError("not a PNG file: " + path.string());
  }
  std::rewind(fp.get());
  detail::PngPixels px;
  std::string err;
  if (!detail::png_read_raw(fp.get(), px, err)) throw IoError(err + ": " + path.string());
  if (px.bit_depth != 8 && px.bit_depth != 16) {
    throw IoError("unsupported bit depth " + std::to_string(px.bit_depth) + ": " + path.string());
  }
  if (px.channels != 1 && px.channels != 3) throw IoError("unsupported channel layout: " + path.string());

  const std::size_t P = static_cast<std::size_t>(px.width) * px.height;
  std::vector<double> data(P * px.channels);
  const double maxv = px.bit_depth == 8 ? 255.0 : 65535.0;
  for (std::size_t i = 0; i < P; ++i) {
    for (int c = 0; c < px.channels; ++c) {
      const std::size_t s = i * px.channels + c;
      const unsigned v = px.bit_depth == 8 ? px.bytes[s] : (unsigned{px.bytes[2 * s]} << 8) | px.bytes[2 * s + 1];
      data[c * P + i] = static_cast<double>(v) / maxv;
    }
  }
  return {px.width, px.height, px.channels, std::move(data), gamma};
}

/// Writes raster values as stored (no transfer function applied), quantized
/// to `bit_depth` (8 or 16) with round-to-nearest.
template <class Tag>
void save_image(const BasicRaster<Tag>& r, const std::filesystem::path& path, int bit_depth = 8) {
  if (bit_depth != 8 && bit_depth != 16) throw ValidationError("save_image: bit depth must be 8 or 16");
  detail::PngPixels px;
  px.width = r.width();
  px.height = r.height();
  px.channels = r.channels();
  px.bit_depth = bit_depth;
  const std::size_t P = r.pixels();
  const int bytes = bit_depth / 8;
  px.bytes.resize(P * px.channels * bytes);
  const double maxv = bit_depth == 8 ? 255.0 : 65535.0;
  for (std::size_t i = 0; i < P; ++i) {
    for (int c = 0; c < px.channels; ++c) {
      const auto q = static_cast<unsigned>(std::lround(std::clamp(r.data()[c * P + i], 0.0, 1.0) * maxv));
      const std::size_t s = i * px.channels + c;
      if (bytes == 1) {
        px.bytes[s] = static_cast<unsigned char>(q);
      } else {
        px.bytes[2 * s] = static_cast<unsigned char>(q >> 8);
        px.bytes[2 * s + 1] = static_cast<unsigned char>(q & 0xff);
      }
    }
  }
  detail::FilePtr fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw IoError("cannot create image: " + path.string());
  std::string err;
  if (!detail::png_write_raw(fp.get(), px, err)) throw IoError(err + ": " + path.string());
}

}  // namespace retinev
