// Copyright 2026 The retinev Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Independent reference implementations. Everything here is written with
// naive loops over plain indices and shares no code path with the library
// beyond its data containers.

#include <algorithm>
#include <cmath>
#include <vector>

#include "retinev/events.hpp"
#include "retinev/retinex.hpp"

namespace retinev::oracle {

/// Earliest positive timestamp at (x, y), clamped below at kMinFpe; NaN if none.
inline double brute_force_fpe(const EventStream& s, int x, int y) {
  double best = kMissing;
  for (const auto& e : s.events()) {
    if (e.x != x || e.y != y || e.p <= 0) continue;
    const double t = e.t < kMinFpe ? kMinFpe : e.t;
    if (std::isnan(best) || t < best) best = t;
  }
  return best;
}

/// Per head: Q, K, V viewed as (h*w) x d matrices, S = Q^T K / sqrt(h*w),
/// column softmax, out = V A.
inline Tensor<double> dense_attention(const Tensor<double>& q, const Tensor<double>& k, const Tensor<double>& v,
                                      int heads, std::vector<std::vector<std::vector<double>>>* maps = nullptr) {
  const Shape s = q.shape();
  const int d = s.c / heads;
  const int M = s.h * s.w;
  Tensor<double> out(s);
  for (int n = 0; n < s.n; ++n)
    for (int hd = 0; hd < heads; ++hd) {
      auto Q = [&](int m, int i) { return q.plane(n, hd * d + i)[m]; };
      auto K = [&](int m, int j) { return k.plane(n, hd * d + j)[m]; };
      auto V = [&](int m, int i) { return v.plane(n, hd * d + i)[m]; };
      std::vector<std::vector<double>> a(d, std::vector<double>(d));
      for (int i = 0; i < d; ++i)
        for (int j = 0; j < d; ++j) {
          double acc = 0;
          for (int m = 0; m < M; ++m) acc += Q(m, i) * K(m, j);
          a[i][j] = acc / std::sqrt(static_cast<double>(M));
        }
      for (int j = 0; j < d; ++j) {
        double mx = a[0][j];
        for (int i = 1; i < d; ++i) mx = std::max(mx, a[i][j]);
        double z = 0;
        for (int i = 0; i < d; ++i) z += std::exp(a[i][j] - mx);
        for (int i = 0; i < d; ++i) a[i][j] = std::exp(a[i][j] - mx) / z;
      }
      for (int m = 0; m < M; ++m)
        for (int j = 0; j < d; ++j) {
          double acc = 0;
          for (int i = 0; i < d; ++i) acc += V(m, i) * a[i][j];
          out.plane(n, hd * d + j)[m] = acc;
        }
      if (maps && n == 0) maps->push_back(a);
    }
  return out;
}

/// Channel layer norm with biased variance and eps 1e-5.
inline Tensor<double> dense_layer_norm(const Tensor<double>& x, const nn::LayerNorm<double>& ln) {
  const Shape s = x.shape();
  Tensor<double> out(s);
  for (int n = 0; n < s.n; ++n)
    for (int y = 0; y < s.h; ++y)
      for (int xx = 0; xx < s.w; ++xx) {
        double mu = 0;
        for (int c = 0; c < s.c; ++c) mu += x.at(n, c, y, xx);
        mu /= s.c;
        double var = 0;
        for (int c = 0; c < s.c; ++c) var += (x.at(n, c, y, xx) - mu) * (x.at(n, c, y, xx) - mu);
        var /= s.c;
        for (int c = 0; c < s.c; ++c) {
          out.at(n, c, y, xx) = ln.gamma.value()[c] * (x.at(n, c, y, xx) - mu) / std::sqrt(var + 1e-5) +
                                ln.beta.value()[c];
        }
      }
  return out;
}

/// 1x1 convolution as an explicit channel mixing sum.
inline Tensor<double> dense_pointwise(const Tensor<double>& x, const nn::Conv2d<double>& conv) {
  const Shape s = x.shape();
  const Shape ws = conv.weight.shape();
  Tensor<double> out({s.n, ws.n, s.h, s.w});
  for (int n = 0; n < s.n; ++n)
    for (int o = 0; o < ws.n; ++o)
      for (int y = 0; y < s.h; ++y)
        for (int xx = 0; xx < s.w; ++xx) {
          double acc = conv.bias.value()[o];
          for (int c = 0; c < s.c; ++c) acc += conv.weight.value()[o * ws.c + c] * x.at(n, c, y, xx);
          out.at(n, o, y, xx) = acc;
        }
  return out;
}

/// r + proj(attention(Q(LN_r r), K(LN_i i), V(LN_i i))) for one block.
inline Tensor<double> dense_ire_attention(const Tensor<double>& r, const Tensor<double>& i,
                                          const IreBlock<double>& block,
                                          std::vector<std::vector<std::vector<double>>>* maps = nullptr) {
  const Tensor<double> rn = dense_layer_norm(r, block.norm_r());
  const Tensor<double> in = dense_layer_norm(i, block.norm_i());
  const Tensor<double> att = dense_attention(dense_pointwise(rn, block.q()), dense_pointwise(in, block.k()),
                                             dense_pointwise(in, block.v()), block.heads(), maps);
  Tensor<double> out = dense_pointwise(att, block.proj());
  for (std::size_t k = 0; k < out.size(); ++k) out[k] += r[k];
  return out;
}

}  // namespace retinev::oracle
