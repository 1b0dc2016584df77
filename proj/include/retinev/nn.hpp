// Copyright 2026 The retinev Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "retinev/ops.hpp"

namespace retinev::nn {

using ag::Var;

template <class T>
struct NamedParam {
  std::string name;
  Var<T> var;
};

template <class T>
using ParamList = std::vector<NamedParam<T>>;

/// Parameter initialization draws doubles so float and double instantiations
/// built from the same seed hold the same values up to rounding.
template <class T>
Var<T> make_param(Shape shape, double stddev, std::mt19937_64& rng) {
  Tensor<T> t(shape);
  if (stddev > 0) {
    std::normal_distribution<double> dist(0.0, stddev);
    for (auto& v : t.vec()) v = static_cast<T>(dist(rng));
  }
  return Var<T>(std::move(t), true);
}

template <class T>
Var<T> make_constant_param(Shape shape, T value) {
  return Var<T>(Tensor<T>(shape, value), true);
}

template <class T>
struct Conv2d {
  Var<T> weight;
  Var<T> bias;

  Conv2d() = default;
  /// He-normal weights and zero bias; `zero_init` zeroes the weights too.
  Conv2d(int in_ch, int out_ch, int kernel, std::mt19937_64& rng, bool zero_init = false)
      : weight(make_param<T>({out_ch, in_ch, kernel, kernel},
                             zero_init ? 0.0 : std::sqrt(2.0 / (in_ch * kernel * kernel)), rng)),
        bias(make_constant_param<T>({1, out_ch, 1, 1}, T(0))) {}

  Var<T> operator()(const Var<T>& x) const { return ag::conv2d(x, weight, bias); }

  void collect(ParamList<T>& out, const std::string& prefix) const {
    out.push_back({prefix + ".weight", weight});
    out.push_back({prefix + ".bias", bias});
  }
  [[nodiscard]] int out_channels() const { return weight.shape().n; }
};

template <class T>
struct LayerNorm {
  Var<T> gamma;
  Var<T> beta;

  LayerNorm() = default;
  explicit LayerNorm(int channels)
      : gamma(make_constant_param<T>({1, channels, 1, 1}, T(1))),
        beta(make_constant_param<T>({1, channels, 1, 1}, T(0))) {}

  Var<T> operator()(const Var<T>& x) const { return ag::layer_norm_channels(x, gamma, beta); }

  void collect(ParamList<T>& out, const std::string& prefix) const {
    out.push_back({prefix + ".gamma", gamma});
    out.push_back({prefix + ".beta", beta});
  }
};

template <class T>
std::size_t parameter_count(const ParamList<T>& params) {
  std::size_t n = 0;
  for (const auto& p : params) n += p.var.value().size();
  return n;
}

}  // namespace retinev::nn
