// Copyright 2026 The retinev Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "retinev/events.hpp"
#include "retinev/nn.hpp"

// Time-to-illumination: brightness-controlled timestamp normalization, the
// conversion E = k / t, a residual U-Net denoiser, a residual pixelwise MLP
// and gamma encoding.

namespace retinev {

/// Hard clamps at inference; smooth saturation while training keeps gradients alive.
enum class ClampMode { kInference, kTraining };

inline constexpr double kIlluminationFloor = 1e-2;

/// t_norm in (0, 1]; the largest valid timestamp maps to exactly 1.
class NormalizedFpeMap {
 public:
  NormalizedFpeMap(int width, int height, std::vector<double> t) : width_(width), height_(height), t_(std::move(t)) {}
  [[nodiscard]] int width() const { return width_; }
  [[nodiscard]] int height() const { return height_; }
  [[nodiscard]] const std::vector<double>& values() const { return t_; }
  [[nodiscard]] double operator[](std::size_t i) const { return t_[i]; }

 private:
  int width_;
  int height_;
  std::vector<double> t_;
};

/// t_norm = (t + beta) / (max t + beta) over valid pixels. Missing pixels are
/// filled with 1, the darkest value. Larger beta brightens the result.
inline NormalizedFpeMap beta_normalize(const FpeMap& m, double beta) {
  if (!(beta >= 0) || !std::isfinite(beta)) throw ValidationError("beta_normalize: beta must be finite and >= 0");
  const double tmax = m.max_valid();
  if (is_missing(tmax)) throw ValidationError("beta_normalize: every pixel is missing");
  const double denom = tmax + beta;
  std::vector<double> t(m.size());
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = m.missing(i) ? 1.0 : (m[i] + beta) / denom;
  return {m.width(), m.height(), std::move(t)};
}

/// Converts t_norm to E = k / t_norm and rescales by max E into (0, 1]: the
/// single-channel network input.
template <class T>
Tensor<T> illumination_input(const NormalizedFpeMap& t, double k) {
  if (!(k > 0)) throw DomainError("illumination_input: k must be > 0");
  std::vector<double> e(t.values().size());
  double emax = 0;
  for (std::size_t i = 0; i < e.size(); ++i) {
    e[i] = k / t[i];
    emax = std::max(emax, e[i]);
  }
  Tensor<T> out({1, 1, t.height(), t.width()});
  for (std::size_t i = 0; i < e.size(); ++i) out[i] = static_cast<T>(e[i] / emax);
  return out;
}

/// Three-scale encoder-decoder with skip connections, predicting a residual.
template <class T>
class Denoiser {
 public:
  Denoiser() = default;
  Denoiser(int width, std::mt19937_64& rng)
      : e1a_(1, width, 3, rng),
        e1b_(width, width, 3, rng),
        e2a_(width, 2 * width, 3, rng),
        e2b_(2 * width, 2 * width, 3, rng),
        b1_(2 * width, 4 * width, 3, rng),
        b2_(4 * width, 4 * width, 3, rng),
        d2a_(6 * width, 2 * width, 3, rng),
        d2b_(2 * width, 2 * width, 3, rng),
        d1a_(3 * width, width, 3, rng),
        d1b_(width, width, 3, rng),
        out_(width, 1, 3, rng, /*zero_init=*/true) {}

  ag::Var<T> operator()(const ag::Var<T>& x) const {
    using namespace ag;
    if (x.shape().h < 4 || x.shape().w < 4) throw ValidationError("Denoiser: input must be at least 4x4");
    auto act = [](const Var<T>& v) { return leaky_relu(v, T(0.2)); };
    Var<T> s1 = act(e1b_(act(e1a_(x))));
    Var<T> s2 = act(e2b_(act(e2a_(avg_pool2(s1)))));
    Var<T> bt = act(b2_(act(b1_(avg_pool2(s2)))));
    Var<T> u2 = concat_channels(upsample2(bt, s2.shape().h, s2.shape().w), s2);
    Var<T> d2 = act(d2b_(act(d2a_(u2))));
    Var<T> u1 = concat_channels(upsample2(d2, s1.shape().h, s1.shape().w), s1);
    Var<T> d1 = act(d1b_(act(d1a_(u1))));
    return add(x, out_(d1));
  }

  void collect(nn::ParamList<T>& out, const std::string& prefix) const {
    e1a_.collect(out, prefix + ".enc1a");
    e1b_.collect(out, prefix + ".enc1b");
    e2a_.collect(out, prefix + ".enc2a");
    e2b_.collect(out, prefix + ".enc2b");
    b1_.collect(out, prefix + ".mid1");
    b2_.collect(out, prefix + ".mid2");
    d2a_.collect(out, prefix + ".dec2a");
    d2b_.collect(out, prefix + ".dec2b");
    d1a_.collect(out, prefix + ".dec1a");
    d1b_.collect(out, prefix + ".dec1b");
    out_.collect(out, prefix + ".out");
  }

 private:
  nn::Conv2d<T> e1a_, e1b_, e2a_, e2b_, b1_, b2_, d2a_, d2b_, d1a_, d1b_, out_;
};

/// 1 -> hidden -> 1 pointwise MLP with a GELU, added to its input. The output
/// layer starts at zero, so a fresh MLP is the identity.
template <class T>
class PixelMlp {
 public:
  PixelMlp() = default;
  PixelMlp(int hidden, std::mt19937_64& rng) : fc1_(1, hidden, 1, rng), fc2_(hidden, 1, 1, rng, true) {}

  ag::Var<T> operator()(const ag::Var<T>& x) const { return ag::add(x, fc2_(ag::gelu(fc1_(x)))); }

  void collect(nn::ParamList<T>& out, const std::string& prefix) const {
    fc1_.collect(out, prefix + ".fc1");
    fc2_.collect(out, prefix + ".fc2");
  }

 private:
  nn::Conv2d<T> fc1_, fc2_;
};

template <class T>
class TimeToIllumination {
 public:
  TimeToIllumination() = default;
  TimeToIllumination(int denoiser_width, int mlp_hidden, double gamma, double floor, std::mt19937_64& rng)
      : denoiser_(denoiser_width, rng), mlp_(mlp_hidden, rng), gamma_(gamma), floor_(floor) {}

  /// [N,1,H,W] rescaled illuminance -> illumination estimate in [floor, 1].
  ag::Var<T> operator()(const ag::Var<T>& e, ClampMode mode) const { return encode(mlp_(denoiser_(e)), mode); }

  /// Post-MLP stage: saturate into [floor^gamma, 1] in linear light, then gamma encode.
  ag::Var<T> encode(const ag::Var<T>& linear, ClampMode mode) const {
    const T lo = static_cast<T>(std::pow(floor_, gamma_));
    ag::Var<T> sat = mode == ClampMode::kTraining ? ag::soft_clamp(linear, lo, T(1), T(200))
                                                  : ag::clamp(linear, lo, T(1));
    return ag::clamp(ag::power(sat, static_cast<T>(1.0 / gamma_)), static_cast<T>(floor_), T(1));
  }

  [[nodiscard]] const Denoiser<T>& denoiser() const { return denoiser_; }
  [[nodiscard]] const PixelMlp<T>& mlp() const { return mlp_; }

  void collect(nn::ParamList<T>& out, const std::string& prefix) const {
    denoiser_.collect(out, prefix + ".denoiser");
    mlp_.collect(out, prefix + ".mlp");
  }

 private:
  Denoiser<T> denoiser_;
  PixelMlp<T> mlp_;
  double gamma_ = 2.2;
  double floor_ = kIlluminationFloor;
};

/// Single-channel illumination estimate with values in [floor, 1].
class IlluminationEstimate {
 public:
  IlluminationEstimate(int width, int height, std::vector<double> v, double floor = kIlluminationFloor)
      : width_(width), height_(height), v_(std::move(v)) {
    if (v_.size() != static_cast<std::size_t>(width_) * height_) {
      throw ValidationError("IlluminationEstimate: data length does not match geometry");
    }
    for (double x : v_) {
      if (!(x >= floor && x <= 1.0)) throw ValidationError("IlluminationEstimate: value outside [floor, 1]");
    }
  }
  [[nodiscard]] int width() const { return width_; }
  [[nodiscard]] int height() const { return height_; }
  [[nodiscard]] const std::vector<double>& values() const { return v_; }
  [[nodiscard]] double operator[](std::size_t i) const { return v_[i]; }

  [[nodiscard]] EncodedRaster as_raster() const { return {width_, height_, 1, v_}; }

 private:
  int width_;
  int height_;
  std::vector<double> v_;
};

}  // namespace retinev
