// Copyright 2026 The retinev Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <vector>

#include "retinev/raster.hpp"

namespace retinev {

inline constexpr double kPsnrCap = 100.0;

namespace detail {

template <class TagA, class TagB>
void require_same_geometry(const BasicRaster<TagA>& a, const BasicRaster<TagB>& b, const char* what) {
  if (a.width() != b.width() || a.height() != b.height() || a.channels() != b.channels()) {
    throw ValidationError(std::string(what) + ": rasters differ in shape");
  }
}

}  // namespace detail

/// 10 log10(peak^2 / MSE) over every channel, capped at 100 dB. No mean or
/// brightness alignment to the reference is applied.
template <class Tag>
double psnr(const BasicRaster<Tag>& a, const BasicRaster<Tag>& b, double peak = 1.0) {
  detail::require_same_geometry(a, b, "psnr");
  double se = 0;
  for (std::size_t i = 0; i < a.data().size(); ++i) {
    const double d = a.data()[i] - b.data()[i];
    se += d * d;
  }
  const double mse = se / static_cast<double>(a.data().size());
  if (mse == 0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(peak * peak / mse));
}

inline constexpr int kSsimWindow = 11;
inline constexpr double kSsimSigma = 1.5;

/// Normalized 1-D Gaussian taps; the 2-D window is their outer product.
inline std::vector<double> ssim_taps() {
  std::vector<double> g(kSsimWindow);
  double sum = 0;
  for (int i = 0; i < kSsimWindow; ++i) {
    const double x = i - kSsimWindow / 2;
    g[i] = std::exp(-x * x / (2 * kSsimSigma * kSsimSigma));
    sum += g[i];
  }
  for (auto& v : g) v /= sum;
  return g;
}

/// Single-scale SSIM on luminance, averaged over every fully covered window
/// position (no padding).
template <class Tag>
double ssim(const BasicRaster<Tag>& a, const BasicRaster<Tag>& b, double peak = 1.0) {
  detail::require_same_geometry(a, b, "ssim");
  if (a.width() < kSsimWindow || a.height() < kSsimWindow) {
    throw ValidationError("ssim: images must be at least 11x11");
  }
  const auto ya = luminance(a).data();
  const auto yb = luminance(b).data();
  const int w = a.width();
  const int h = a.height();
  const auto g = ssim_taps();
  const double c1 = (0.01 * peak) * (0.01 * peak);
  const double c2 = (0.03 * peak) * (0.03 * peak);
  const int ow = w - kSsimWindow + 1;
  const int oh = h - kSsimWindow + 1;

  // Separable filtering of the five moment images: horizontal pass, then vertical.
  auto filter = [&](const std::vector<double>& img) {
    std::vector<double> tmp(static_cast<std::size_t>(h) * ow);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < ow; ++x) {
        double s = 0;
        for (int k = 0; k < kSsimWindow; ++k) s += g[k] * img[static_cast<std::size_t>(y) * w + x + k];
        tmp[static_cast<std::size_t>(y) * ow + x] = s;
      }
    std::vector<double> out(static_cast<std::size_t>(oh) * ow);
    for (int y = 0; y < oh; ++y)
      for (int x = 0; x < ow; ++x) {
        double s = 0;
        for (int k = 0; k < kSsimWindow; ++k) s += g[k] * tmp[static_cast<std::size_t>(y + k) * ow + x];
        out[static_cast<std::size_t>(y) * ow + x] = s;
      }
    return out;
  };
  std::vector<double> aa(ya.size()), bb(ya.size()), ab(ya.size());
  for (std::size_t i = 0; i < ya.size(); ++i) {
    aa[i] = ya[i] * ya[i];
    bb[i] = yb[i] * yb[i];
    ab[i] = ya[i] * yb[i];
  }
  const auto mu_a = filter(ya);
  const auto mu_b = filter(yb);
  const auto s_aa = filter(aa);
  const auto s_bb = filter(bb);
  const auto s_ab = filter(ab);
  double acc = 0;
  for (std::size_t i = 0; i < mu_a.size(); ++i) {
    const double ma = mu_a[i];
    const double mb = mu_b[i];
    const double va = s_aa[i] - ma * ma;
    const double vb = s_bb[i] - mb * mb;
    const double cov = s_ab[i] - ma * mb;
    acc += ((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
  }
  return acc / static_cast<double>(mu_a.size());
}

}  // namespace retinev
