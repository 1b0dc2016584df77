// Copyright 2026 The retinev Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "retinev/nn.hpp"
#include "retinev/retinex.hpp"

// Training objective. All reductions are means so magnitudes do not depend on
// resolution or batch size.

namespace retinev {

struct LossWeights {
  double recon = 1.0;
  double reflectance = 0.5;
  double perceptual = 0.1;

  void validate() const {
    for (double v : {recon, reflectance, perceptual}) {
      if (!(v >= 0) || !std::isfinite(v)) throw ConfigError("loss: weights must be finite and >= 0");
    }
  }
};

struct LossReport {
  double recon = 0;
  double reflectance = 0;
  double perceptual = 0;
  double total = 0;
};

/// mean|I*R_hat_low - S| + mean|I*R_normal - S|; one illumination serves both terms
/// and gradients reach it through both.
template <class T>
ag::Var<T> recon_loss(const ag::Var<T>& illumination, const ag::Var<T>& r_hat_low, const ag::Var<T>& r_normal,
                      const ag::Var<T>& s_normal) {
  return ag::add(ag::l1_mean(reconstruct(illumination, r_hat_low), s_normal),
                 ag::l1_mean(reconstruct(illumination, r_normal), s_normal));
}

/// mean|R_low - R_normal| + mean|R_hat_low - R_normal|.
template <class T>
ag::Var<T> reflectance_loss(const ag::Var<T>& r_low, const ag::Var<T>& r_hat_low, const ag::Var<T>& r_normal) {
  return ag::add(ag::l1_mean(r_low, r_normal), ag::l1_mean(r_hat_low, r_normal));
}

inline constexpr std::uint64_t kDefaultExtractorSeed = 0x5eed'f00d;

/// Fixed three-stage convolutional pyramid 3 -> 8 -> 16 -> 32 channels with ReLU
/// and 2x2 average pooling between stages. Weights never require gradients and
/// depend only on the seed.
template <class T>
class PerceptualExtractor {
 public:
  explicit PerceptualExtractor(std::uint64_t seed = kDefaultExtractorSeed) : seed_(seed) {
    std::mt19937_64 rng(seed);
    const int widths[] = {3, 8, 16, 32};
    for (int s = 0; s < 3; ++s) {
      nn::Conv2d<T> c(widths[s], widths[s + 1], 3, rng);
      c.weight = ag::Var<T>(c.weight.value(), false);
      c.bias = ag::Var<T>(c.bias.value(), false);
      stages_.push_back(std::move(c));
    }
  }

  /// One feature map per stage. Pooling is skipped once a side drops below 2.
  std::vector<ag::Var<T>> features(const ag::Var<T>& image) const {
    std::vector<ag::Var<T>> out;
    ag::Var<T> x = image;
    for (std::size_t s = 0; s < stages_.size(); ++s) {
      if (s > 0 && x.shape().h >= 2 && x.shape().w >= 2) x = ag::avg_pool2(x);
      x = ag::relu(stages_[s](x));
      out.push_back(x);
    }
    return out;
  }

  [[nodiscard]] std::uint64_t seed() const { return seed_; }
  [[nodiscard]] const std::vector<nn::Conv2d<T>>& stages() const { return stages_; }

 private:
  std::uint64_t seed_;
  std::vector<nn::Conv2d<T>> stages_;
};

/// Sum over stages of the mean L1 feature distance.
template <class T>
ag::Var<T> perceptual_loss(const ag::Var<T>& pred, const ag::Var<T>& target, const PerceptualExtractor<T>& extractor) {
  require_same_shape(pred.shape(), target.shape(), "perceptual_loss");
  const auto fp = extractor.features(pred);
  const auto ft = extractor.features(target);
  ag::Var<T> acc = ag::l1_mean(fp[0], ft[0]);
  for (std::size_t s = 1; s < fp.size(); ++s) acc = ag::add(acc, ag::l1_mean(fp[s], ft[s]));
  return acc;
}

/// total = recon_w * recon + reflectance_w * reflectance + perceptual_w * perceptual.
inline LossReport total_loss(const LossReport& parts, const LossWeights& w) {
  w.validate();
  LossReport r = parts;
  r.total = w.recon * parts.recon + w.reflectance * parts.reflectance + w.perceptual * parts.perceptual;
  return r;
}

/// Differentiable counterpart of total_loss.
template <class T>
ag::Var<T> weighted_total(const ag::Var<T>& recon, const ag::Var<T>& reflectance, const ag::Var<T>& perceptual,
                          const LossWeights& w) {
  w.validate();
  return ag::add(ag::add(ag::scale(recon, static_cast<T>(w.recon)), ag::scale(reflectance, static_cast<T>(w.reflectance))),
                 ag::scale(perceptual, static_cast<T>(w.perceptual)));
}

}  // namespace retinev
