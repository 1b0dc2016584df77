// Copyright 2026 The retinev Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numbers>
#include <vector>

#include "retinev/autograd.hpp"

// Differentiable tensor operations. Everything is NCHW; forward passes are
// plain loops or Eigen GEMMs, and each op carries its own hand-written backward.

namespace retinev::ag {

namespace detail {

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MatMap = Eigen::Map<RowMat<T>, 0, Eigen::OuterStride<>>;
template <class T>
using CMatMap = Eigen::Map<const RowMat<T>, 0, Eigen::OuterStride<>>;

// Upper bound on im2col buffer elements; larger images are processed in row bands.
inline constexpr std::size_t kMaxColElements = std::size_t{1} << 23;

/// Unfolds rows [y0, y1) of a C x H x W image into a (C*k*k) x ((y1-y0)*W) matrix
/// with zero padding `pad` on every side.
template <class T>
void im2col(const T* img, int C, int H, int W, int k, int pad, int y0, int y1, T* cols) {
  const int band = (y1 - y0) * W;
  for (int c = 0; c < C; ++c) {
    const T* src = img + static_cast<std::size_t>(c) * H * W;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        T* dst = cols + static_cast<std::size_t>((c * k + ky) * k + kx) * band;
        const int dy = ky - pad;
        const int dx = kx - pad;
        const int x_lo = std::max(0, -dx);
        const int x_hi = std::min(W, W - dx);
        for (int y = y0; y < y1; ++y) {
          T* drow = dst + static_cast<std::size_t>(y - y0) * W;
          const int sy = y + dy;
          if (sy < 0 || sy >= H || x_lo >= x_hi) {
            std::fill(drow, drow + W, T(0));
            continue;
          }
          const T* srow = src + static_cast<std::size_t>(sy) * W;
          std::fill(drow, drow + x_lo, T(0));
          std::memcpy(drow + x_lo, srow + x_lo + dx, sizeof(T) * static_cast<std::size_t>(x_hi - x_lo));
          std::fill(drow + x_hi, drow + W, T(0));
        }
      }
    }
  }
}

/// Adjoint of im2col: scatters-and-adds columns back into the image.
template <class T>
void col2im_add(const T* cols, int C, int H, int W, int k, int pad, int y0, int y1, T* img) {
  const int band = (y1 - y0) * W;
  for (int c = 0; c < C; ++c) {
    T* dst = img + static_cast<std::size_t>(c) * H * W;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const T* src = cols + static_cast<std::size_t>((c * k + ky) * k + kx) * band;
        const int dy = ky - pad;
        const int dx = kx - pad;
        const int x_lo = std::max(0, -dx);
        const int x_hi = std::min(W, W - dx);
        for (int y = y0; y < y1; ++y) {
          const int sy = y + dy;
          if (sy < 0 || sy >= H) continue;
          const T* srow = src + static_cast<std::size_t>(y - y0) * W;
          T* drow = dst + static_cast<std::size_t>(sy) * W;
          for (int x = x_lo; x < x_hi; ++x) drow[x + dx] += srow[x];
        }
      }
    }
  }
}

inline int band_rows(std::size_t col_rows, int H, int W) {
  const std::size_t per_row = col_rows * static_cast<std::size_t>(W);
  const std::size_t rows = std::max<std::size_t>(1, kMaxColElements / std::max<std::size_t>(per_row, 1));
  return static_cast<int>(std::min<std::size_t>(rows, static_cast<std::size_t>(H)));
}

template <class T>
T sigmoid(T x) {
  return x >= T(0) ? T(1) / (T(1) + std::exp(-x)) : std::exp(x) / (T(1) + std::exp(x));
}

template <class T>
T softplus(T x) {
  return x > T(0) ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

}  // namespace detail

/// Same-padded stride-1 2-D convolution. `w` is [Co, Ci, k, k] with odd k,
/// `b` is [1, Co, 1, 1].
template <class T>
Var<T> conv2d(const Var<T>& x, const Var<T>& w, const Var<T>& b) {
  using namespace detail;
  const Shape xs = x.shape();
  const Shape ws = w.shape();
  if (ws.c != xs.c || ws.h != ws.w || ws.h % 2 == 0) {
    throw ValidationError("conv2d: weight " + to_string(ws) + " incompatible with input " + to_string(xs));
  }
  if (b.shape() != Shape{1, ws.n, 1, 1}) throw ValidationError("conv2d: bias shape " + to_string(b.shape()));
  const int Co = ws.n;
  const int Ci = xs.c;
  const int k = ws.h;
  const int pad = k / 2;
  const int H = xs.h;
  const int W = xs.w;
  const int M = H * W;
  const int K = Ci * k * k;

  Tensor<T> out({xs.n, Co, H, W});
  CMatMap<T> wm(w.value().data(), Co, K, Eigen::OuterStride<>(K));
  const T* bias = b.value().data();
  const int rows = (k == 1) ? H : band_rows(static_cast<std::size_t>(K), H, W);
  std::vector<T> cols(k == 1 ? 0 : static_cast<std::size_t>(K) * rows * W);

  for (int n = 0; n < xs.n; ++n) {
    const T* img = x.value().plane(n, 0);
    T* o = out.plane(n, 0);
    for (int y0 = 0; y0 < H; y0 += rows) {
      const int y1 = std::min(H, y0 + rows);
      const int band = (y1 - y0) * W;
      MatMap<T> om(o + static_cast<std::size_t>(y0) * W, Co, band, Eigen::OuterStride<>(M));
      if (k == 1) {
        CMatMap<T> xm(img + static_cast<std::size_t>(y0) * W, Ci, band, Eigen::OuterStride<>(M));
        om.noalias() = wm * xm;
      } else {
        im2col(img, Ci, H, W, k, pad, y0, y1, cols.data());
        CMatMap<T> cm(cols.data(), K, band, Eigen::OuterStride<>(band));
        om.noalias() = wm * cm;
      }
      for (int co = 0; co < Co; ++co) om.row(co).array() += bias[co];
    }
  }

  return make_op<T>(std::move(out), {x, w, b}, [=](Node<T>& self) {
    const auto& px = self.parents[0];
    const auto& pw = self.parents[1];
    const auto& pb = self.parents[2];
    const Tensor<T>& dy = self.grad;
    CMatMap<T> wm2(pw->value.data(), Co, K, Eigen::OuterStride<>(K));
    std::vector<T> cbuf(k == 1 ? 0 : static_cast<std::size_t>(K) * rows * W);
    std::vector<T> dcols(static_cast<std::size_t>(K) * rows * W);
    T* dw = pw->requires_grad ? pw->grad_ref().data() : nullptr;
    T* db = pb->requires_grad ? pb->grad_ref().data() : nullptr;
    T* dx = px->requires_grad ? px->grad_ref().data() : nullptr;
    for (int n = 0; n < xs.n; ++n) {
      const T* img = px->value.plane(n, 0);
      const T* g = dy.plane(n, 0);
      for (int y0 = 0; y0 < H; y0 += rows) {
        const int y1 = std::min(H, y0 + rows);
        const int band = (y1 - y0) * W;
        CMatMap<T> gm(g + static_cast<std::size_t>(y0) * W, Co, band, Eigen::OuterStride<>(M));
        if (db) {
          // Plain loop: Eigen's vectorized sum depends on buffer alignment,
          // which would make training runs differ in the last bit.
          for (int co = 0; co < Co; ++co) {
            const T* row = g + static_cast<std::size_t>(co) * M + static_cast<std::size_t>(y0) * W;
            T acc = 0;
            for (int j = 0; j < band; ++j) acc += row[j];
            db[co] += acc;
          }
        }
        if (k == 1) {
          CMatMap<T> xm(img + static_cast<std::size_t>(y0) * W, Ci, band, Eigen::OuterStride<>(M));
          if (dw) {
            MatMap<T> dwm(dw, Co, K, Eigen::OuterStride<>(K));
            dwm.noalias() += gm * xm.transpose();
          }
          if (dx) {
            MatMap<T> dxm(dx + static_cast<std::size_t>(n) * Ci * M + static_cast<std::size_t>(y0) * W, Ci, band,
                          Eigen::OuterStride<>(M));
            dxm.noalias() += wm2.transpose() * gm;
          }
        } else {
          if (dw) {
            im2col(img, Ci, H, W, k, pad, y0, y1, cbuf.data());
            CMatMap<T> cm(cbuf.data(), K, band, Eigen::OuterStride<>(band));
            MatMap<T> dwm(dw, Co, K, Eigen::OuterStride<>(K));
            dwm.noalias() += gm * cm.transpose();
          }
          if (dx) {
            MatMap<T> dcm(dcols.data(), K, band, Eigen::OuterStride<>(band));
            dcm.noalias() = wm2.transpose() * gm;
            col2im_add(dcols.data(), Ci, H, W, k, pad, y0, y1, dx + static_cast<std::size_t>(n) * Ci * M);
          }
        }
      }
    }
  });
}

/// 2x2 average pooling; a trailing odd row/column is dropped.
template <class T>
Var<T> avg_pool2(const Var<T>& x) {
  const Shape s = x.shape();
  const int Ho = s.h / 2;
  const int Wo = s.w / 2;
  if (Ho == 0 || Wo == 0) throw ValidationError("avg_pool2: input too small " + to_string(s));
  Tensor<T> out({s.n, s.c, Ho, Wo});
  for (int n = 0; n < s.n; ++n) {
    for (int c = 0; c < s.c; ++c) {
      const T* in = x.value().plane(n, c);
      T* o = out.plane(n, c);
      for (int y = 0; y < Ho; ++y) {
        const T* r0 = in + static_cast<std::size_t>(2 * y) * s.w;
        const T* r1 = r0 + s.w;
        for (int xx = 0; xx < Wo; ++xx) {
          o[y * Wo + xx] = T(0.25) * (r0[2 * xx] + r0[2 * xx + 1] + r1[2 * xx] + r1[2 * xx + 1]);
        }
      }
    }
  }
  return make_op<T>(std::move(out), {x}, [=](Node<T>& self) {
    Tensor<T>& dx = self.parents[0]->grad_ref();
    for (int n = 0; n < s.n; ++n) {
      for (int c = 0; c < s.c; ++c) {
        const T* g = self.grad.plane(n, c);
        T* d = dx.plane(n, c);
        for (int y = 0; y < Ho; ++y) {
          T* r0 = d + static_cast<std::size_t>(2 * y) * s.w;
          T* r1 = r0 + s.w;
          for (int xx = 0; xx < Wo; ++xx) {
            const T v = T(0.25) * g[y * Wo + xx];
            r0[2 * xx] += v;
            r0[2 * xx + 1] += v;
            r1[2 * xx] += v;
            r1[2 * xx + 1] += v;
          }
        }
      }
    }
  });
}

/// Nearest-neighbour upsampling by two, cropped or edge-extended to (H, W).
template <class T>
Var<T> upsample2(const Var<T>& x, int H, int W) {
  const Shape s = x.shape();
  auto src_y = [=](int y) { return std::min(y / 2, s.h - 1); };
  auto src_x = [=](int xx) { return std::min(xx / 2, s.w - 1); };
  Tensor<T> out({s.n, s.c, H, W});
  for (int n = 0; n < s.n; ++n) {
    for (int c = 0; c < s.c; ++c) {
      const T* in = x.value().plane(n, c);
      T* o = out.plane(n, c);
      for (int y = 0; y < H; ++y) {
        const T* r = in + static_cast<std::size_t>(src_y(y)) * s.w;
        for (int xx = 0; xx < W; ++xx) o[y * W + xx] = r[src_x(xx)];
      }
    }
  }
  return make_op<T>(std::move(out), {x}, [=](Node<T>& self) {
    Tensor<T>& dx = self.parents[0]->grad_ref();
    for (int n = 0; n < s.n; ++n) {
      for (int c = 0; c < s.c; ++c) {
        const T* g = self.grad.plane(n, c);
        T* d = dx.plane(n, c);
        for (int y = 0; y < H; ++y) {
          T* r = d + static_cast<std::size_t>(src_y(y)) * s.w;
          for (int xx = 0; xx < W; ++xx) r[src_x(xx)] += g[y * W + xx];
        }
      }
    }
  });
}

template <class T>
Var<T> concat_channels(const Var<T>& a, const Var<T>& b) {
  const Shape sa = a.shape();
  const Shape sb = b.shape();
  if (sa.n != sb.n || sa.h != sb.h || sa.w != sb.w) {
    throw ValidationError("concat_channels: " + to_string(sa) + " vs " + to_string(sb));
  }
  Tensor<T> out({sa.n, sa.c + sb.c, sa.h, sa.w});
  const std::size_t ia = sa.image();
  const std::size_t ib = sb.image();
  for (int n = 0; n < sa.n; ++n) {
    std::copy_n(a.value().data() + n * ia, ia, out.data() + n * (ia + ib));
    std::copy_n(b.value().data() + n * ib, ib, out.data() + n * (ia + ib) + ia);
  }
  return make_op<T>(std::move(out), {a, b}, [=](Node<T>& self) {
    for (int n = 0; n < sa.n; ++n) {
      const T* g = self.grad.data() + n * (ia + ib);
      if (self.parent_needs_grad(0)) {
        T* d = self.parents[0]->grad_ref().data() + n * ia;
        for (std::size_t i = 0; i < ia; ++i) d[i] += g[i];
      }
      if (self.parent_needs_grad(1)) {
        T* d = self.parents[1]->grad_ref().data() + n * ib;
        for (std::size_t i = 0; i < ib; ++i) d[i] += g[ia + i];
      }
    }
  });
}

/// Channels [start, start + count) of every image.
template <class T>
Var<T> slice_channels(const Var<T>& x, int start, int count) {
  const Shape s = x.shape();
  if (start < 0 || count <= 0 || start + count > s.c) throw ValidationError("slice_channels: out of range");
  Tensor<T> out({s.n, count, s.h, s.w});
  const std::size_t plane = s.plane();
  for (int n = 0; n < s.n; ++n) {
    std::copy_n(x.value().plane(n, start), plane * count, out.plane(n, 0));
  }
  return make_op<T>(std::move(out), {x}, [=](Node<T>& self) {
    Tensor<T>& dx = self.parents[0]->grad_ref();
    for (int n = 0; n < s.n; ++n) {
      const T* g = self.grad.plane(n, 0);
      T* d = dx.plane(n, start);
      for (std::size_t i = 0; i < plane * count; ++i) d[i] += g[i];
    }
  });
}

template <class T>
Var<T> concat_batch(const Var<T>& a, const Var<T>& b) {
  const Shape sa = a.shape();
  const Shape sb = b.shape();
  if (sa.c != sb.c || sa.h != sb.h || sa.w != sb.w) {
    throw ValidationError("concat_batch: " + to_string(sa) + " vs " + to_string(sb));
  }
  Tensor<T> out({sa.n + sb.n, sa.c, sa.h, sa.w});
  std::copy_n(a.value().data(), a.value().size(), out.data());
  std::copy_n(b.value().data(), b.value().size(), out.data() + a.value().size());
  const std::size_t na = a.value().size();
  const std::size_t nb = b.value().size();
  return make_op<T>(std::move(out), {a, b}, [=](Node<T>& self) {
    if (self.parent_needs_grad(0)) {
      T* d = self.parents[0]->grad_ref().data();
      for (std::size_t i = 0; i < na; ++i) d[i] += self.grad[i];
    }
    if (self.parent_needs_grad(1)) {
      T* d = self.parents[1]->grad_ref().data();
      for (std::size_t i = 0; i < nb; ++i) d[i] += self.grad[na + i];
    }
  });
}

template <class T>
Var<T> slice_batch(const Var<T>& x, int start, int count) {
  const Shape s = x.shape();
  if (start < 0 || count <= 0 || start + count > s.n) throw ValidationError("slice_batch: out of range");
  const std::size_t img = s.image();
  Tensor<T> out({count, s.c, s.h, s.w});
  std::copy_n(x.value().data() + start * img, count * img, out.data());
  return make_op<T>(std::move(out), {x}, [=](Node<T>& self) {
    T* d = self.parents[0]->grad_ref().data() + start * img;
    for (std::size_t i = 0; i < count * img; ++i) d[i] += self.grad[i];
  });
}

template <class T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  require_same_shape(a.shape(), b.shape(), "add");
  Tensor<T> out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.value()[i];
  return make_op<T>(std::move(out), {a, b}, [](Node<T>& self) {
    for (std::size_t p = 0; p < 2; ++p) {
      if (!self.parent_needs_grad(p)) continue;
      Tensor<T>& d = self.parents[p]->grad_ref();
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += self.grad[i];
    }
  });
}

template <class T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  require_same_shape(a.shape(), b.shape(), "sub");
  Tensor<T> out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.value()[i];
  return make_op<T>(std::move(out), {a, b}, [](Node<T>& self) {
    if (self.parent_needs_grad(0)) {
      Tensor<T>& d = self.parents[0]->grad_ref();
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += self.grad[i];
    }
    if (self.parent_needs_grad(1)) {
      Tensor<T>& d = self.parents[1]->grad_ref();
      for (std::size_t i = 0; i < d.size(); ++i) d[i] -= self.grad[i];
    }
  });
}

/// Elementwise product. `b` may have a single channel, broadcast over the channels of `a`.
template <class T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  const Shape sa = a.shape();
  const Shape sb = b.shape();
  const bool bcast = sb.c == 1 && sa.c != 1;
  if (!(sa == sb) && !(bcast && sa.n == sb.n && sa.h == sb.h && sa.w == sb.w)) {
    throw ValidationError("mul: shape mismatch " + to_string(sa) + " vs " + to_string(sb));
  }
  const std::size_t plane = sa.plane();
  auto bidx = [=](std::size_t i) {
    if (!bcast) return i;
    const std::size_t n = i / sa.image();
    return n * plane + (i % plane);
  };
  Tensor<T> out(sa);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * b.value()[bidx(i)];
  return make_op<T>(std::move(out), {a, b}, [=](Node<T>& self) {
    const Tensor<T>& av = self.parents[0]->value;
    const Tensor<T>& bv = self.parents[1]->value;
    if (self.parent_needs_grad(0)) {
      Tensor<T>& d = self.parents[0]->grad_ref();
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += self.grad[i] * bv[bidx(i)];
    }
    if (self.parent_needs_grad(1)) {
      Tensor<T>& d = self.parents[1]->grad_ref();
      for (std::size_t i = 0; i < self.grad.size(); ++i) d[bidx(i)] += self.grad[i] * av[i];
    }
  });
}

template <class T>
Var<T> scale(const Var<T>& x, T s) {
  Tensor<T> out = x.value();
  for (auto& v : out.vec()) v *= s;
  return make_op<T>(std::move(out), {x}, [s](Node<T>& self) {
    Tensor<T>& d = self.parents[0]->grad_ref();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += s * self.grad[i];
  });
}

namespace detail {

/// Shared scaffolding for pointwise unary ops: f gives the value, df the
/// derivative as a function of (input, output).
template <class T, class F, class DF>
Var<T> unary(const Var<T>& x, F f, DF df) {
  Tensor<T> out(x.shape());
  const Tensor<T>& xv = x.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(xv[i]);
  return make_op<T>(std::move(out), {x}, [df](Node<T>& self) {
    const Tensor<T>& xin = self.parents[0]->value;
    Tensor<T>& d = self.parents[0]->grad_ref();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += self.grad[i] * df(xin[i], self.value[i]);
  });
}

}  // namespace detail

template <class T>
Var<T> relu(const Var<T>& x) {
  return detail::unary(
      x, [](T v) { return v > T(0) ? v : T(0); }, [](T v, T) { return v > T(0) ? T(1) : T(0); });
}

template <class T>
Var<T> leaky_relu(const Var<T>& x, T slope = T(0.2)) {
  return detail::unary(
      x, [slope](T v) { return v > T(0) ? v : slope * v; }, [slope](T v, T) { return v > T(0) ? T(1) : slope; });
}

/// Exact (erf) GELU.
template <class T>
Var<T> gelu(const Var<T>& x) {
  return detail::unary(
      x, [](T v) { return T(0.5) * v * (T(1) + std::erf(v * (std::numbers::sqrt2_v<T> / T(2)))); },
      [](T v, T) {
        const T cdf = T(0.5) * (T(1) + std::erf(v * (std::numbers::sqrt2_v<T> / T(2))));
        const T pdf = std::exp(T(-0.5) * v * v) * std::numbers::inv_sqrtpi_v<T> * (std::numbers::sqrt2_v<T> / T(2));
        return cdf + v * pdf;
      });
}

template <class T>
Var<T> sigmoid(const Var<T>& x) {
  return detail::unary(
      x, [](T v) { return detail::sigmoid(v); }, [](T, T y) { return y * (T(1) - y); });
}

/// Hard clamp; the gradient is zero outside [lo, hi].
template <class T>
Var<T> clamp(const Var<T>& x, T lo, T hi) {
  return detail::unary(
      x, [=](T v) { return std::clamp(v, lo, hi); }, [=](T v, T) { return (v >= lo && v <= hi) ? T(1) : T(0); });
}

/// Smooth saturation into [lo, hi]: lo + sp(x - lo) - sp(x - hi) with
/// sp(z) = softplus(k z) / k. Output stays strictly inside (lo, hi] and
/// approaches the identity away from the bounds as k grows.
template <class T>
Var<T> soft_clamp(const Var<T>& x, T lo, T hi, T sharpness) {
  const T k = sharpness;
  return detail::unary(
      x,
      [=](T v) {
        return lo + detail::softplus(k * (v - lo)) / k - detail::softplus(k * (v - hi)) / k;
      },
      [=](T v, T) { return detail::sigmoid(k * (v - lo)) - detail::sigmoid(k * (v - hi)); });
}

/// x^p for strictly positive x.
template <class T>
Var<T> power(const Var<T>& x, T p) {
  for (T v : x.value().vec()) {
    if (!(v > T(0))) throw DomainError("power: non-positive base");
  }
  return detail::unary(
      x, [p](T v) { return std::pow(v, p); }, [p](T v, T y) { return p * y / v; });
}

/// Layer normalization across channels at every pixel, with per-channel affine
/// parameters of shape [1, C, 1, 1].
template <class T>
Var<T> layer_norm_channels(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, T eps = T(1e-5)) {
  const Shape s = x.shape();
  if (gamma.shape() != Shape{1, s.c, 1, 1} || beta.shape() != Shape{1, s.c, 1, 1}) {
    throw ValidationError("layer_norm_channels: affine shape mismatch");
  }
  const std::size_t P = s.plane();
  const int C = s.c;
  Tensor<T> out(s);
  auto xhat = std::make_shared<Tensor<T>>(s);
  auto rstd = std::make_shared<std::vector<T>>(static_cast<std::size_t>(s.n) * P);
  const T* g = gamma.value().data();
  const T* bt = beta.value().data();
  std::vector<T> mean(P);
  std::vector<T> var(P);
  // Channel loops outside, pixel loops inside: every inner loop is contiguous.
  for (int n = 0; n < s.n; ++n) {
    const T* in = x.value().plane(n, 0);
    T* xh = xhat->plane(n, 0);
    T* o = out.plane(n, 0);
    T* r = rstd->data() + static_cast<std::size_t>(n) * P;
    std::fill(mean.begin(), mean.end(), T(0));
    std::fill(var.begin(), var.end(), T(0));
    for (int c = 0; c < C; ++c)
      for (std::size_t p = 0; p < P; ++p) mean[p] += in[c * P + p];
    for (std::size_t p = 0; p < P; ++p) mean[p] /= T(C);
    for (int c = 0; c < C; ++c)
      for (std::size_t p = 0; p < P; ++p) {
        const T d = in[c * P + p] - mean[p];
        var[p] += d * d;
      }
    for (std::size_t p = 0; p < P; ++p) r[p] = T(1) / std::sqrt(var[p] / T(C) + eps);
    for (int c = 0; c < C; ++c)
      for (std::size_t p = 0; p < P; ++p) {
        const T h = (in[c * P + p] - mean[p]) * r[p];
        xh[c * P + p] = h;
        o[c * P + p] = g[c] * h + bt[c];
      }
  }
  return make_op<T>(std::move(out), {x, gamma, beta}, [=](Node<T>& self) {
    const T* gv = self.parents[1]->value.data();
    T* dg = self.parent_needs_grad(1) ? self.parents[1]->grad_ref().data() : nullptr;
    T* db = self.parent_needs_grad(2) ? self.parents[2]->grad_ref().data() : nullptr;
    T* dx = self.parent_needs_grad(0) ? self.parents[0]->grad_ref().data() : nullptr;
    std::vector<T> mean_d(P);
    std::vector<T> mean_dx(P);
    for (int n = 0; n < s.n; ++n) {
      const T* gy = self.grad.plane(n, 0);
      const T* xh = xhat->plane(n, 0);
      for (int c = 0; c < C; ++c) {
        T sg = 0;
        T sb = 0;
        for (std::size_t p = 0; p < P; ++p) {
          sg += gy[c * P + p] * xh[c * P + p];
          sb += gy[c * P + p];
        }
        if (dg) dg[c] += sg;
        if (db) db[c] += sb;
      }
      if (!dx) continue;
      std::fill(mean_d.begin(), mean_d.end(), T(0));
      std::fill(mean_dx.begin(), mean_dx.end(), T(0));
      for (int c = 0; c < C; ++c)
        for (std::size_t p = 0; p < P; ++p) {
          const T dh = gy[c * P + p] * gv[c];
          mean_d[p] += dh;
          mean_dx[p] += dh * xh[c * P + p];
        }
      const T* r = rstd->data() + static_cast<std::size_t>(n) * P;
      T* d = dx + static_cast<std::size_t>(n) * s.image();
      for (int c = 0; c < C; ++c)
        for (std::size_t p = 0; p < P; ++p) {
          const T dh = gy[c * P + p] * gv[c];
          d[c * P + p] += r[p] * (dh - mean_d[p] / T(C) - xh[c * P + p] * mean_dx[p] / T(C));
        }
    }
  });
}

/// Column-wise softmax of a d x d score matrix stored row-major: each column j
/// is normalized over rows i.
template <class T>
void softmax_columns(T* a, int d) {
  for (int j = 0; j < d; ++j) {
    T mx = a[j];
    for (int i = 1; i < d; ++i) mx = std::max(mx, a[i * d + j]);
    T sum = 0;
    for (int i = 0; i < d; ++i) {
      a[i * d + j] = std::exp(a[i * d + j] - mx);
      sum += a[i * d + j];
    }
    for (int i = 0; i < d; ++i) a[i * d + j] /= sum;
  }
}

/// Per-head attention matrices softmax_col(Q^T K / sqrt(d_k)) for one image.
/// Q and K are viewed as (h*w) x (c/heads) matrices per head, so every map is
/// (c/heads) x (c/heads); d_k is the key-vector length h*w.
template <class T>
std::vector<Tensor<T>> channel_attention_maps(const Tensor<T>& q, const Tensor<T>& k, int n, int heads) {
  using namespace detail;
  const Shape s = q.shape();
  const int d = s.c / heads;
  const int M = static_cast<int>(s.plane());
  const T scale = T(1) / std::sqrt(T(M));
  std::vector<Tensor<T>> maps;
  for (int hd = 0; hd < heads; ++hd) {
    Tensor<T> a({1, 1, d, d});
    CMatMap<T> qm(q.plane(n, hd * d), d, M, Eigen::OuterStride<>(M));
    CMatMap<T> km(k.plane(n, hd * d), d, M, Eigen::OuterStride<>(M));
    MatMap<T> am(a.data(), d, d, Eigen::OuterStride<>(d));
    am.noalias() = scale * (qm * km.transpose());
    softmax_columns(a.data(), d);
    maps.push_back(std::move(a));
  }
  return maps;
}

/// Channel-transposed multi-head attention: for each head,
/// out = V softmax_col(Q^T K / sqrt(d_k)) with Q, K, V viewed as (h*w) x d
/// matrices. In NCHW storage (d x M blocks) that is out = A^T V.
/// Only (c/heads)^2 scores per head are ever formed.
template <class T>
Var<T> channel_attention(const Var<T>& q, const Var<T>& k, const Var<T>& v, int heads) {
  using namespace detail;
  const Shape s = q.shape();
  require_same_shape(s, k.shape(), "channel_attention(q,k)");
  require_same_shape(s, v.shape(), "channel_attention(q,v)");
  if (heads <= 0 || s.c % heads != 0) {
    throw ValidationError("channel_attention: channels " + std::to_string(s.c) + " not divisible by heads " +
                          std::to_string(heads));
  }
  const int d = s.c / heads;
  const int M = static_cast<int>(s.plane());
  const T sc = T(1) / std::sqrt(T(M));
  auto attn = std::make_shared<std::vector<Tensor<T>>>();
  Tensor<T> out(s);
  for (int n = 0; n < s.n; ++n) {
    auto maps = channel_attention_maps(q.value(), k.value(), n, heads);
    for (int hd = 0; hd < heads; ++hd) {
      CMatMap<T> am(maps[hd].data(), d, d, Eigen::OuterStride<>(d));
      CMatMap<T> vm(v.value().plane(n, hd * d), d, M, Eigen::OuterStride<>(M));
      MatMap<T> om(out.plane(n, hd * d), d, M, Eigen::OuterStride<>(M));
      om.noalias() = am.transpose() * vm;
      attn->push_back(std::move(maps[hd]));
    }
  }
  return make_op<T>(std::move(out), {q, k, v}, [=](Node<T>& self) {
    const auto& pq = self.parents[0];
    const auto& pk = self.parents[1];
    const auto& pv = self.parents[2];
    RowMat<T> da(d, d);
    RowMat<T> ds(d, d);
    for (int n = 0; n < s.n; ++n) {
      for (int hd = 0; hd < heads; ++hd) {
        const Tensor<T>& a = (*attn)[static_cast<std::size_t>(n * heads + hd)];
        CMatMap<T> am(a.data(), d, d, Eigen::OuterStride<>(d));
        CMatMap<T> gm(self.grad.plane(n, hd * d), d, M, Eigen::OuterStride<>(M));
        CMatMap<T> vm(pv->value.plane(n, hd * d), d, M, Eigen::OuterStride<>(M));
        if (pv->requires_grad) {
          MatMap<T> dvm(pv->grad_ref().plane(n, hd * d), d, M, Eigen::OuterStride<>(M));
          dvm.noalias() += am * gm;
        }
        if (!pq->requires_grad && !pk->requires_grad) continue;
        // out_j = sum_i A_ij v_i  =>  dA_ij = <v_i, g_j>
        da.noalias() = vm * gm.transpose();
        for (int j = 0; j < d; ++j) {
          T dot = 0;
          for (int i = 0; i < d; ++i) dot += am(i, j) * da(i, j);
          for (int i = 0; i < d; ++i) ds(i, j) = am(i, j) * (da(i, j) - dot) * sc;
        }
        CMatMap<T> qm(pq->value.plane(n, hd * d), d, M, Eigen::OuterStride<>(M));
        CMatMap<T> km(pk->value.plane(n, hd * d), d, M, Eigen::OuterStride<>(M));
        if (pq->requires_grad) {
          MatMap<T> dqm(pq->grad_ref().plane(n, hd * d), d, M, Eigen::OuterStride<>(M));
          dqm.noalias() += ds * km;
        }
        if (pk->requires_grad) {
          MatMap<T> dkm(pk->grad_ref().plane(n, hd * d), d, M, Eigen::OuterStride<>(M));
          dkm.noalias() += ds.transpose() * qm;
        }
      }
    }
  });
}

/// Mean absolute difference, a scalar. The subgradient at zero is zero.
template <class T>
Var<T> l1_mean(const Var<T>& a, const Var<T>& b) {
  require_same_shape(a.shape(), b.shape(), "l1_mean");
  const std::size_t N = a.value().size();
  T acc = 0;
  for (std::size_t i = 0; i < N; ++i) acc += std::abs(a.value()[i] - b.value()[i]);
  return make_op<T>(Tensor<T>::scalar(acc / T(N)), {a, b}, [N](Node<T>& self) {
    const T g = self.grad[0] / T(N);
    const Tensor<T>& av = self.parents[0]->value;
    const Tensor<T>& bv = self.parents[1]->value;
    auto sgn = [](T v) { return v > T(0) ? T(1) : (v < T(0) ? T(-1) : T(0)); };
    if (self.parent_needs_grad(0)) {
      Tensor<T>& d = self.parents[0]->grad_ref();
      for (std::size_t i = 0; i < N; ++i) d[i] += g * sgn(av[i] - bv[i]);
    }
    if (self.parent_needs_grad(1)) {
      Tensor<T>& d = self.parents[1]->grad_ref();
      for (std::size_t i = 0; i < N; ++i) d[i] -= g * sgn(av[i] - bv[i]);
    }
  });
}

template <class T>
Var<T> mean(const Var<T>& x) {
  const std::size_t N = x.value().size();
  return make_op<T>(Tensor<T>::scalar(x.value().sum() / T(N)), {x}, [N](Node<T>& self) {
    Tensor<T>& d = self.parents[0]->grad_ref();
    const T g = self.grad[0] / T(N);
    for (auto& v : d.vec()) v += g;
  });
}

/// Rotates each image by 90 degrees k times (counter-clockwise) and optionally
/// mirrors horizontally first. Plain data transform, not differentiable.
template <class T>
Tensor<T> geometric_transform(const Tensor<T>& x, bool flip, int rot90) {
  Tensor<T> cur = x;
  if (flip) {
    for (int n = 0; n < cur.n(); ++n)
      for (int c = 0; c < cur.c(); ++c)
        for (int y = 0; y < cur.h(); ++y) {
          T* row = cur.plane(n, c) + static_cast<std::size_t>(y) * cur.w();
          std::reverse(row, row + cur.w());
        }
  }
  for (int r = 0; r < ((rot90 % 4) + 4) % 4; ++r) {
    const Shape s = cur.shape();
    Tensor<T> next({s.n, s.c, s.w, s.h});
    for (int n = 0; n < s.n; ++n)
      for (int c = 0; c < s.c; ++c)
        for (int y = 0; y < s.h; ++y)
          for (int xx = 0; xx < s.w; ++xx) next.at(n, c, s.w - 1 - xx, y) = cur.at(n, c, y, xx);
    cur = std::move(next);
  }
  return cur;
}

}  // namespace retinev::ag
