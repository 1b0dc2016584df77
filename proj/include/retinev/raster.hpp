// Copyright 2026 The retinev Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "retinev/error.hpp"
#include "retinev/tensor.hpp"

namespace retinev {

inline constexpr double kDefaultGamma = 2.2;

/// Rec. 709 relative-luminance weights.
inline constexpr double kLumaR = 0.2126;
inline constexpr double kLumaG = 0.7152;
inline constexpr double kLumaB = 0.0722;

namespace detail {

inline void validate_raster(int width, int height, int channels, const std::vector<double>& data, const char* what) {
  if (width <= 0 || height <= 0) throw ValidationError(std::string(what) + ": non-positive size");
  if (channels != 1 && channels != 3) throw ValidationError(std::string(what) + ": channels must be 1 or 3");
  if (data.size() != static_cast<std::size_t>(width) * height * channels) {
    throw ValidationError(std::string(what) + ": data length does not match geometry");
  }
  for (double v : data) {
    if (!std::isfinite(v)) throw ValidationError(std::string(what) + ": non-finite value");
    if (v < 0.0 || v > 1.0) throw ValidationError(std::string(what) + ": value outside [0, 1]");
  }
}

}  // namespace detail

/// Immutable planar raster (channel-major, then row-major) with values in [0, 1].
/// `Tag` separates scene-linear from gamma-encoded data at the type level.
template <class Tag>
class BasicRaster {
 public:
  BasicRaster() = default;
  BasicRaster(int width, int height, int channels, std::vector<double> data)
      : width_(width), height_(height), channels_(channels), data_(std::move(data)) {
    detail::validate_raster(width_, height_, channels_, data_, Tag::kName);
  }

  [[nodiscard]] int width() const { return width_; }
  [[nodiscard]] int height() const { return height_; }
  [[nodiscard]] int channels() const { return channels_; }
  [[nodiscard]] const std::vector<double>& data() const { return data_; }
  [[nodiscard]] std::size_t pixels() const { return static_cast<std::size_t>(width_) * height_; }
  [[nodiscard]] double at(int ch, int y, int x) const {
    return data_[(static_cast<std::size_t>(ch) * height_ + y) * width_ + x];
  }

  friend bool operator==(const BasicRaster&, const BasicRaster&) = default;

 private:
  int width_ = 0;
  int height_ = 0;
  int channels_ = 0;
  std::vector<double> data_;
};

struct LinearTag {
  static constexpr const char* kName = "LinearRaster";
};
struct EncodedTag {
  static constexpr const char* kName = "EncodedRaster";
};

using LinearRaster = BasicRaster<LinearTag>;

class EncodedRaster : public BasicRaster<EncodedTag> {
 public:
  EncodedRaster() = default;
  EncodedRaster(int width, int height, int channels, std::vector<double> data, double gamma = kDefaultGamma)
      : BasicRaster<EncodedTag>(width, height, channels, std::move(data)), gamma_(gamma) {
    if (!(gamma_ > 0.0) || !std::isfinite(gamma_)) throw ValidationError("EncodedRaster: gamma must be > 0");
  }
  [[nodiscard]] double gamma() const { return gamma_; }

  friend bool operator==(const EncodedRaster&, const EncodedRaster&) = default;

 private:
  double gamma_ = kDefaultGamma;
};

/// out = r^(1/gamma) elementwise.
inline EncodedRaster gamma_encode(const LinearRaster& r, double gamma = kDefaultGamma) {
  if (!(gamma > 0.0) || !std::isfinite(gamma)) throw ValidationError("gamma_encode: gamma must be > 0");
  std::vector<double> out(r.data().size());
  const double e = 1.0 / gamma;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::pow(r.data()[i], e);
  return {r.width(), r.height(), r.channels(), std::move(out), gamma};
}

inline LinearRaster gamma_decode(const EncodedRaster& r) {
  std::vector<double> out(r.data().size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::pow(r.data()[i], r.gamma());
  return {r.width(), r.height(), r.channels(), std::move(out)};
}

/// Single-channel relative luminance; single-channel input is returned as is.
template <class Tag>
BasicRaster<Tag> luminance(const BasicRaster<Tag>& r) {
  if (r.channels() == 1) return r;
  const std::size_t P = r.pixels();
  std::vector<double> out(P);
  const auto& d = r.data();
  for (std::size_t i = 0; i < P; ++i) {
    out[i] = std::clamp(kLumaR * d[i] + kLumaG * d[P + i] + kLumaB * d[2 * P + i], 0.0, 1.0);
  }
  return {r.width(), r.height(), 1, std::move(out)};
}

inline EncodedRaster luminance(const EncodedRaster& r) {
  const BasicRaster<EncodedTag>& base = r;
  auto y = luminance(base);
  return {y.width(), y.height(), 1, y.data(), r.gamma()};
}

/// Copies raster values into image `n` of a [N, C, H, W] tensor.
template <class T, class Tag>
void write_to_tensor(const BasicRaster<Tag>& r, Tensor<T>& t, int n) {
  if (t.c() != r.channels() || t.h() != r.height() || t.w() != r.width()) {
    throw ValidationError("write_to_tensor: geometry mismatch");
  }
  T* dst = t.plane(n, 0);
  for (std::size_t i = 0; i < r.data().size(); ++i) dst[i] = static_cast<T>(r.data()[i]);
}

template <class T, class Tag>
Tensor<T> to_tensor(const BasicRaster<Tag>& r) {
  Tensor<T> t({1, r.channels(), r.height(), r.width()});
  write_to_tensor(r, t, 0);
  return t;
}

/// Image `n` of a tensor as a linear raster; values are clamped into [0, 1].
template <class T>
LinearRaster linear_from_tensor(const Tensor<T>& t, int n = 0) {
  const std::size_t len = t.shape().image();
  std::vector<double> data(len);
  const T* src = t.plane(n, 0);
  for (std::size_t i = 0; i < len; ++i) data[i] = std::clamp(static_cast<double>(src[i]), 0.0, 1.0);
  return {t.w(), t.h(), t.c(), std::move(data)};
}

/// Rectangular crop, all channels.
template <class Tag>
BasicRaster<Tag> crop(const BasicRaster<Tag>& r, int x0, int y0, int w, int h) {
  if (x0 < 0 || y0 < 0 || w <= 0 || h <= 0 || x0 + w > r.width() || y0 + h > r.height()) {
    throw ValidationError("crop: window outside raster");
  }
  std::vector<double> out(static_cast<std::size_t>(w) * h * r.channels());
  for (int c = 0; c < r.channels(); ++c)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) out[(static_cast<std::size_t>(c) * h + y) * w + x] = r.at(c, y0 + y, x0 + x);
  return {w, h, r.channels(), std::move(out)};
}

inline EncodedRaster crop(const EncodedRaster& r, int x0, int y0, int w, int h) {
  const BasicRaster<EncodedTag>& base = r;
  auto c = crop(base, x0, y0, w, h);
  return {c.width(), c.height(), c.channels(), c.data(), r.gamma()};
}

/// Pixel mean over all channels.
template <class Tag>
double mean_value(const BasicRaster<Tag>& r) {
  double s = 0;
  for (double v : r.data()) s += v;
  return s / static_cast<double>(r.data().size());
}

}  // namespace retinev
