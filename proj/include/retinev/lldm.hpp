// Copyright 2026 The retinev Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "retinev/events.hpp"
#include "retinev/raster.hpp"

// Low-light degradation model used to synthesize training data: spatial
// degradations on the ground-truth image, then temporal degradations on the
// simulated first-positive-event map. Each domain applies its stages in a
// randomly shuffled order with randomly sampled strengths.

namespace retinev {

using Rng = std::mt19937_64;

struct Range {
  double lo = 0.0;
  double hi = 0.0;
  friend bool operator==(const Range&, const Range&) = default;
};

/// Training-time contrast-threshold distribution N(0.2, 0.03).
inline constexpr double kTrainThresholdMu = 0.2;
inline constexpr double kTrainThresholdSigma = 0.03;
/// Test-time contrast-threshold distribution N(0.2, 0.05).
inline constexpr double kTestThresholdMu = 0.2;
inline constexpr double kTestThresholdSigma = 0.05;

struct DegradationConfig {
  Range blur_sigma{0.0, 1.5};         // pixels
  Range downsample_factor{1.0, 2.0};  // integer factors sampled uniformly from [lo, hi]
  Range poisson_scale{50.0, 500.0};   // effective photons at full scale; 0 disables shot noise
  Range gauss_sigma{0.0, 0.03};       // read-noise standard deviation
  Range latency_alpha{0.0, 0.2};      // t' = t (1 + alpha t / t_max)
  double dead_pixel_max_prob = 0.05;  // P(dead) = max_prob * t / t_max
  double threshold_mu = kTrainThresholdMu;
  double threshold_sigma = kTrainThresholdSigma;
  std::uint64_t seed = 0;

  /// Every stage disabled and thresholds fixed at mu.
  static DegradationConfig identity(std::uint64_t seed = 0) {
    DegradationConfig c;
    c.blur_sigma = {0, 0};
    c.downsample_factor = {1, 1};
    c.poisson_scale = {0, 0};
    c.gauss_sigma = {0, 0};
    c.latency_alpha = {0, 0};
    c.dead_pixel_max_prob = 0;
    c.threshold_sigma = 0;
    c.seed = seed;
    return c;
  }

  [[nodiscard]] DegradationConfig with_test_thresholds() const {
    DegradationConfig c = *this;
    c.threshold_mu = kTestThresholdMu;
    c.threshold_sigma = kTestThresholdSigma;
    return c;
  }

  /// Throws ValidationError naming the first offending field.
  void validate() const {
    auto check = [](const Range& r, const char* name, double min_lo) {
      if (!std::isfinite(r.lo) || !std::isfinite(r.hi) || r.lo > r.hi || r.lo < min_lo) {
        throw ValidationError(std::string("lldm.") + name + ": need " + std::to_string(min_lo) + " <= lo <= hi");
      }
    };
    check(blur_sigma, "blur_sigma", 0.0);
    check(downsample_factor, "downsample_factor", 1.0);
    check(poisson_scale, "poisson_scale", 0.0);
    check(gauss_sigma, "gauss_sigma", 0.0);
    check(latency_alpha, "latency_alpha", 0.0);
    if (!(dead_pixel_max_prob >= 0 && dead_pixel_max_prob <= 1)) {
      throw ValidationError("lldm.dead_pixel_max_prob: must lie in [0, 1]");
    }
    if (!(threshold_mu > 0) || !std::isfinite(threshold_mu)) throw ValidationError("lldm.threshold_mu: must be > 0");
    if (!(threshold_sigma >= 0) || !std::isfinite(threshold_sigma)) {
      throw ValidationError("lldm.threshold_sigma: must be >= 0");
    }
  }

  friend bool operator==(const DegradationConfig&, const DegradationConfig&) = default;
};

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Independent generator for (seed, index); lets samples be synthesized in any
/// order or in parallel with identical results.
inline Rng derive_stream(std::uint64_t seed, std::uint64_t index, std::uint64_t purpose = 0) {
  return Rng(splitmix64(splitmix64(seed) ^ splitmix64(index + 0x632be59bd9b4e019ULL) ^ (purpose * 0xd6e8feb86659fd93ULL)));
}

namespace detail {

inline double sample_uniform(const Range& r, Rng& rng) {
  const double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
  return r.lo == r.hi ? r.lo : r.lo + (r.hi - r.lo) * u;
}

inline int sample_factor(const Range& r, Rng& rng) {
  const int lo = static_cast<int>(std::lround(r.lo));
  const int hi = static_cast<int>(std::lround(r.hi));
  return std::uniform_int_distribution<int>(lo, std::max(lo, hi))(rng);
}

/// N(mu, sigma) restricted to positive values; sigma == 0 returns mu exactly.
inline double sample_positive_normal(double mu, double sigma, Rng& rng) {
  if (sigma == 0.0) return mu;
  std::normal_distribution<double> dist(mu, sigma);
  for (int i = 0; i < 64; ++i) {
    const double v = dist(rng);
    if (v > 0) return v;
  }
  return mu;
}

inline std::vector<double> gaussian_kernel(double sigma) {
  const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<double> k(2 * radius + 1);
  double sum = 0;
  for (int i = -radius; i <= radius; ++i) {
    k[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
    sum += k[i + radius];
  }
  for (auto& v : k) v /= sum;
  return k;
}

/// Separable Gaussian blur of one plane with replicated borders.
inline void blur_plane(double* plane, int w, int h, double sigma) {
  const auto k = gaussian_kernel(sigma);
  const int r = static_cast<int>(k.size() / 2);
  std::vector<double> tmp(static_cast<std::size_t>(w) * h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double acc = 0;
      for (int i = -r; i <= r; ++i) acc += k[i + r] * plane[y * w + std::clamp(x + i, 0, w - 1)];
      tmp[y * w + x] = acc;
    }
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double acc = 0;
      for (int i = -r; i <= r; ++i) acc += k[i + r] * tmp[std::clamp(y + i, 0, h - 1) * w + x];
      plane[y * w + x] = acc;
    }
}

/// Box-average downsampling by `f` (partial edge blocks average what they
/// cover) followed by bilinear upsampling to the original size.
inline void down_up_plane(double* plane, int w, int h, int f) {
  const int lw = (w + f - 1) / f;
  const int lh = (h + f - 1) / f;
  std::vector<double> low(static_cast<std::size_t>(lw) * lh);
  for (int by = 0; by < lh; ++by)
    for (int bx = 0; bx < lw; ++bx) {
      double acc = 0;
      int cnt = 0;
      for (int y = by * f; y < std::min(h, (by + 1) * f); ++y)
        for (int x = bx * f; x < std::min(w, (bx + 1) * f); ++x) {
          acc += plane[y * w + x];
          ++cnt;
        }
      low[by * lw + bx] = acc / cnt;
    }
  for (int y = 0; y < h; ++y) {
    const double sy = std::clamp((y + 0.5) / f - 0.5, 0.0, static_cast<double>(lh - 1));
    const int y0 = static_cast<int>(sy);
    const int y1 = std::min(y0 + 1, lh - 1);
    const double fy = sy - y0;
    for (int x = 0; x < w; ++x) {
      const double sx = std::clamp((x + 0.5) / f - 0.5, 0.0, static_cast<double>(lw - 1));
      const int x0 = static_cast<int>(sx);
      const int x1 = std::min(x0 + 1, lw - 1);
      const double fx = sx - x0;
      const double top = low[y0 * lw + x0] * (1 - fx) + low[y0 * lw + x1] * fx;
      const double bot = low[y1 * lw + x0] * (1 - fx) + low[y1 * lw + x1] * fx;
      plane[y * w + x] = top * (1 - fy) + bot * fy;
    }
  }
}

/// y = Poisson(x s) / s + N(0, sigma^2); either term is skipped when its parameter is 0.
inline void poisson_gaussian(std::vector<double>& data, double photons, double sigma, Rng& rng) {
  if (photons > 0) {
    for (auto& v : data) {
      std::poisson_distribution<long long> dist(std::max(v, 0.0) * photons);
      v = static_cast<double>(dist(rng)) / photons;
    }
  }
  if (sigma > 0) {
    std::normal_distribution<double> dist(0.0, sigma);
    for (auto& v : data) v += dist(rng);
  }
}

}  // namespace detail

/// Blur, down/up-sampling and Poisson-Gaussian noise, each with strength drawn
/// from `cfg`, applied in a random order; the result is clamped to [0, 1].
inline LinearRaster degrade_spatial(const LinearRaster& gt, const DegradationConfig& cfg, Rng& rng) {
  cfg.validate();
  const double sigma = detail::sample_uniform(cfg.blur_sigma, rng);
  const int factor = detail::sample_factor(cfg.downsample_factor, rng);
  const double photons = detail::sample_uniform(cfg.poisson_scale, rng);
  const double read_sigma = detail::sample_uniform(cfg.gauss_sigma, rng);
  std::array<int, 3> order{0, 1, 2};
  std::shuffle(order.begin(), order.end(), rng);

  std::vector<double> data = gt.data();
  const int w = gt.width();
  const int h = gt.height();
  const std::size_t P = gt.pixels();
  for (int stage : order) {
    switch (stage) {
      case 0:
        if (sigma > 0) {
          for (int c = 0; c < gt.channels(); ++c) detail::blur_plane(data.data() + c * P, w, h, sigma);
        }
        break;
      case 1:
        if (factor > 1) {
          for (int c = 0; c < gt.channels(); ++c) detail::down_up_plane(data.data() + c * P, w, h, factor);
        }
        break;
      default:
        detail::poisson_gaussian(data, photons, read_sigma, rng);
        break;
    }
  }
  for (auto& v : data) v = std::clamp(v, 0.0, 1.0);
  return {w, h, gt.channels(), std::move(data)};
}

/// Timestamp latency, dead pixels and threshold jitter, in a random order.
/// Latency and dead-pixel probability both grow linearly with t / t_max.
inline FpeMap degrade_temporal(const FpeMap& m, const DegradationConfig& cfg, Rng& rng) {
  cfg.validate();
  const double alpha = detail::sample_uniform(cfg.latency_alpha, rng);
  std::array<int, 3> order{0, 1, 2};
  std::shuffle(order.begin(), order.end(), rng);

  std::vector<double> t = m.values();
  auto current_max = [&t] {
    double mx = 0;
    for (double v : t) {
      if (!is_missing(v)) mx = std::max(mx, v);
    }
    return mx;
  };
  for (int stage : order) {
    const double tmax = current_max();
    if (tmax <= 0) break;  // every pixel missing
    switch (stage) {
      case 0:
        if (alpha > 0) {
          for (auto& v : t) {
            if (!is_missing(v)) v *= 1.0 + alpha * v / tmax;
          }
        }
        break;
      case 1:
        if (cfg.dead_pixel_max_prob > 0) {
          std::uniform_real_distribution<double> u(0.0, 1.0);
          for (auto& v : t) {
            if (!is_missing(v) && u(rng) < cfg.dead_pixel_max_prob * v / tmax) v = kMissing;
          }
        }
        break;
      default:
        if (cfg.threshold_sigma > 0) {
          for (auto& v : t) {
            if (is_missing(v)) continue;
            const double ratio = detail::sample_positive_normal(cfg.threshold_mu, cfg.threshold_sigma, rng) /
                                 cfg.threshold_mu;
            v *= ratio;
          }
        }
        break;
    }
  }
  return {m.width(), m.height(), std::move(t)};
}

/// Per-pixel thresholds drawn from N(mu, sigma) truncated to positive values.
inline ThresholdField sample_thresholds(int width, int height, double mu, double sigma, Rng& rng) {
  std::vector<double> c(static_cast<std::size_t>(width) * height);
  for (auto& v : c) v = detail::sample_positive_normal(mu, sigma, rng);
  return {width, height, std::move(c)};
}

struct TrainingSample {
  FpeMap fpe;              // degraded first-positive-event map
  LinearRaster gt_linear;  // clean supervision target
};

/// Linearize -> spatial degradation -> luminance -> FPE simulation with
/// Gaussian thresholds -> temporal degradation. Pure in (gt, cfg.seed, sample_index).
inline TrainingSample synthesize_training_sample(const EncodedRaster& gt, const SensorConstants& sensor,
                                                 const DegradationConfig& cfg, std::uint64_t sample_index) {
  Rng rng = derive_stream(cfg.seed, sample_index);
  LinearRaster lin = gamma_decode(gt);
  const LinearRaster degraded = degrade_spatial(lin, cfg, rng);
  const LinearRaster lum = luminance(degraded);
  const ThresholdField c = sample_thresholds(lum.width(), lum.height(), cfg.threshold_mu, cfg.threshold_sigma, rng);
  FpeMap fpe = degrade_temporal(simulate_fpe_map(lum, sensor, c), cfg, rng);
  return {std::move(fpe), std::move(lin)};
}

/// Degradation-free FPE map with every threshold at mu; the denoiser's target.
inline FpeMap clean_fpe_map(const LinearRaster& gt_linear, const SensorConstants& sensor, double threshold_mu) {
  return simulate_fpe_map(gt_linear, sensor, ThresholdField::uniform(gt_linear.width(), gt_linear.height(), threshold_mu));
}

/// Synthetic low-light exposure: scale by a factor drawn from `exposure`, then
/// Poisson-Gaussian noise with strengths drawn from `cfg`.
inline LinearRaster synthesize_low_light(const LinearRaster& gt_linear, const Range& exposure,
                                         const DegradationConfig& cfg, Rng& rng) {
  const double factor = detail::sample_uniform(exposure, rng);
  const double photons = detail::sample_uniform(cfg.poisson_scale, rng);
  const double read_sigma = detail::sample_uniform(cfg.gauss_sigma, rng);
  std::vector<double> data = gt_linear.data();
  for (auto& v : data) v *= factor;
  detail::poisson_gaussian(data, photons, read_sigma, rng);
  for (auto& v : data) v = std::clamp(v, 0.0, 1.0);
  return {gt_linear.width(), gt_linear.height(), gt_linear.channels(), std::move(data)};
}

}  // namespace retinev
