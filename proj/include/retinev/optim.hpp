// Copyright 2026 The retinev Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include "retinev/nn.hpp"

namespace retinev {

/// Cosine annealing from lr_max at step 0 to lr_min at step `total`; constant
/// at lr_min afterwards.
inline double cosine_lr(long step, long total, double lr_max, double lr_min) {
  if (total <= 0 || step >= total) return lr_min;
  if (step <= 0) return lr_max;
  const double progress = static_cast<double>(step) / static_cast<double>(total);
  return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + std::cos(std::numbers::pi * progress));
}

/// Rescales all gradients so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping. Accumulates in double for stability.
template <class T>
double clip_grad_norm(const nn::ParamList<T>& params, double max_norm) {
  double sq = 0;
  for (const auto& p : params) {
    for (T g : p.var.grad().vec()) sq += static_cast<double>(g) * g;
  }
  const double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0) {
    const T s = static_cast<T>(max_norm / norm);
    for (auto p : params) {
      for (auto& v : p.var.mutable_grad().vec()) v *= s;
    }
  }
  return norm;
}

/// Adam with per-parameter learning-rate multipliers.
template <class T>
class Adam {
 public:
  struct Slot {
    std::vector<T> m;
    std::vector<T> v;
  };

  Adam(nn::ParamList<T> params, std::vector<double> lr_scale, double beta1 = 0.9, double beta2 = 0.999,
       double eps = 1e-8)
      : params_(std::move(params)), lr_scale_(std::move(lr_scale)), beta1_(beta1), beta2_(beta2), eps_(eps) {
    if (lr_scale_.size() != params_.size()) throw ValidationError("Adam: one lr scale per parameter is required");
    for (const auto& p : params_) slots_.push_back({std::vector<T>(p.var.value().size()), std::vector<T>(p.var.value().size())});
  }

  void zero_grad() {
    for (auto& p : params_) p.var.zero_grad();
  }

  /// One update at base rate `lr`. Parameters that received no gradient are
  /// treated as having gradient zero.
  void step(double lr) {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
      auto& var = params_[i].var;
      auto& w = var.mutable_value();
      const Tensor<T>& g = var.mutable_grad();
      auto& [m, v] = slots_[i];
      const double a = lr * lr_scale_[i];
      for (std::size_t k = 0; k < w.size(); ++k) {
        const double gk = g[k];
        const double mk = beta1_ * m[k] + (1.0 - beta1_) * gk;
        const double vk = beta2_ * v[k] + (1.0 - beta2_) * gk * gk;
        m[k] = static_cast<T>(mk);
        v[k] = static_cast<T>(vk);
        w[k] = static_cast<T>(w[k] - a * (mk / bc1) / (std::sqrt(vk / bc2) + eps_));
      }
    }
  }

  [[nodiscard]] long step_count() const { return t_; }
  void set_step_count(long t) { t_ = t; }
  [[nodiscard]] std::vector<Slot>& slots() { return slots_; }
  [[nodiscard]] const std::vector<Slot>& slots() const { return slots_; }
  [[nodiscard]] const nn::ParamList<T>& params() const { return params_; }
  [[nodiscard]] double lr_scale(std::size_t i) const { return lr_scale_[i]; }

 private:
  nn::ParamList<T> params_;
  std::vector<double> lr_scale_;
  std::vector<Slot> slots_;
  double beta1_;
  double beta2_;
  double eps_;
  long t_ = 0;
};

}  // namespace retinev
