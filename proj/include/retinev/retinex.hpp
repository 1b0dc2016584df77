// Copyright 2026 The retinev Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>
#include <vector>

#include "retinev/nn.hpp"
#include "retinev/t2i.hpp"

// Illumination-guided Retinex decomposition, illumination-aided reflectance
// enhancement (channel-transposed cross attention) and S = I * R reconstruction.

namespace retinev {

/// Where the reflectance enhancer takes keys and values from.
enum class Fusion {
  kCrossAttention,  // K, V from the illumination features
  kNone,            // K, V from the reflectance features themselves: no illumination fusion
};

inline const char* to_string(Fusion f) { return f == Fusion::kCrossAttention ? "cross_attention" : "none"; }

inline Fusion fusion_from_string(const std::string& s) {
  if (s == "cross_attention") return Fusion::kCrossAttention;
  if (s == "none") return Fusion::kNone;
  throw ValidationError("unknown fusion mode '" + s + "' (expected cross_attention or none)");
}

/// Plain 3x3 convolution stack on concat(S, I) with a sigmoid output, so R lies
/// in [0, 1]. One instance serves low-light and normal-light inputs alike.
template <class T>
class DecompositionNet {
 public:
  DecompositionNet() = default;
  DecompositionNet(int width, int layers, std::mt19937_64& rng) {
    if (layers < 2) throw ValidationError("DecompositionNet: need at least 2 layers");
    layers_.emplace_back(4, width, 3, rng);
    for (int i = 0; i < layers - 2; ++i) layers_.emplace_back(width, width, 3, rng);
    layers_.emplace_back(width, 3, 3, rng);
  }

  ag::Var<T> operator()(const ag::Var<T>& image, const ag::Var<T>& illumination) const {
    const Shape si = image.shape();
    const Shape sl = illumination.shape();
    if (si.c != 3 || sl.c != 1 || si.n != sl.n || si.h != sl.h || si.w != sl.w) {
      throw ValidationError("decompose: image " + to_string(si) + " and illumination " + to_string(sl) +
                            " are incompatible");
    }
    ag::Var<T> x = ag::concat_channels(image, illumination);
    for (std::size_t i = 0; i + 1 < layers_.size(); ++i) x = ag::leaky_relu(layers_[i](x), T(0.2));
    return ag::sigmoid(layers_.back()(x));
  }

  void collect(nn::ParamList<T>& out, const std::string& prefix) const {
    for (std::size_t i = 0; i < layers_.size(); ++i) layers_[i].collect(out, prefix + ".conv" + std::to_string(i));
  }

 private:
  std::vector<nn::Conv2d<T>> layers_;
};

/// One enhancement block: pre-norm channel attention with queries from the
/// reflectance stream, then a gated feed-forward; both residual.
template <class T>
class IreBlock {
 public:
  IreBlock() = default;
  IreBlock(int channels, int heads, int expansion, std::mt19937_64& rng)
      : heads_(heads),
        hidden_(channels * expansion),
        norm_r_(channels),
        norm_i_(channels),
        norm_ffn_(channels),
        q_(channels, channels, 1, rng),
        k_(channels, channels, 1, rng),
        v_(channels, channels, 1, rng),
        proj_(channels, channels, 1, rng),
        ffn_in_(channels, 2 * channels * expansion, 1, rng),
        ffn_out_(channels * expansion, channels, 1, rng) {
    if (heads <= 0 || channels % heads != 0) throw ValidationError("IreBlock: channels must divide into heads");
  }

  /// r + proj(attn(Q(LN r), K(LN i), V(LN i))). With kNone keys and values come from r.
  ag::Var<T> attention(const ag::Var<T>& r, const ag::Var<T>& i, Fusion fusion) const {
    using namespace ag;
    require_same_shape(r.shape(), i.shape(), "ire_attention");
    Var<T> rn = norm_r_(r);
    Var<T> src = fusion == Fusion::kCrossAttention ? norm_i_(i) : rn;
    return add(r, proj_(channel_attention(q_(rn), k_(src), v_(src), heads_)));
  }

  /// Per-head (c/heads) x (c/heads) attention matrices for image `n`.
  std::vector<Tensor<T>> attention_maps(const ag::Var<T>& r, const ag::Var<T>& i, Fusion fusion, int n = 0) const {
    ag::NoGradGuard guard;
    ag::Var<T> rn = norm_r_(r);
    ag::Var<T> src = fusion == Fusion::kCrossAttention ? norm_i_(i) : rn;
    return ag::channel_attention_maps(q_(rn).value(), k_(src).value(), n, heads_);
  }

  ag::Var<T> operator()(const ag::Var<T>& r, const ag::Var<T>& i, Fusion fusion) const {
    using namespace ag;
    Var<T> x = attention(r, i, fusion);
    Var<T> h = ffn_in_(norm_ffn_(x));
    Var<T> gated = mul(gelu(slice_channels(h, 0, hidden_)), slice_channels(h, hidden_, hidden_));
    return add(x, ffn_out_(gated));
  }

  void collect(nn::ParamList<T>& out, const std::string& prefix) const {
    norm_r_.collect(out, prefix + ".norm_r");
    norm_i_.collect(out, prefix + ".norm_i");
    norm_ffn_.collect(out, prefix + ".norm_ffn");
    q_.collect(out, prefix + ".q");
    k_.collect(out, prefix + ".k");
    v_.collect(out, prefix + ".v");
    proj_.collect(out, prefix + ".proj");
    ffn_in_.collect(out, prefix + ".ffn_in");
    ffn_out_.collect(out, prefix + ".ffn_out");
  }

  [[nodiscard]] int heads() const { return heads_; }
  [[nodiscard]] const nn::LayerNorm<T>& norm_r() const { return norm_r_; }
  [[nodiscard]] const nn::LayerNorm<T>& norm_i() const { return norm_i_; }
  [[nodiscard]] const nn::Conv2d<T>& q() const { return q_; }
  [[nodiscard]] const nn::Conv2d<T>& k() const { return k_; }
  [[nodiscard]] const nn::Conv2d<T>& v() const { return v_; }
  [[nodiscard]] const nn::Conv2d<T>& proj() const { return proj_; }

 private:
  int heads_ = 1;
  int hidden_ = 0;
  nn::LayerNorm<T> norm_r_, norm_i_, norm_ffn_;
  nn::Conv2d<T> q_, k_, v_, proj_, ffn_in_, ffn_out_;
};

/// Cross-modal channel attention of one block: queries from reflectance
/// features, keys and values from illumination features.
template <class T>
ag::Var<T> ire_attention(const ag::Var<T>& r_feat, const ag::Var<T>& i_feat, const IreBlock<T>& block) {
  return block.attention(r_feat, i_feat, Fusion::kCrossAttention);
}

/// R_hat = clamp(R_low + head(blocks(embed(R_low), embed(I)))). The head starts
/// at zero so an untrained enhancer passes R_low through unchanged.
template <class T>
class ReflectanceEnhancer {
 public:
  ReflectanceEnhancer() = default;
  ReflectanceEnhancer(int channels, int heads, int blocks, int expansion, Fusion fusion, std::mt19937_64& rng)
      : fusion_(fusion),
        embed_r_(3, channels, 3, rng),
        embed_i_(1, channels, 3, rng),
        head_(channels, 3, 3, rng, /*zero_init=*/true) {
    for (int b = 0; b < blocks; ++b) blocks_.emplace_back(channels, heads, expansion, rng);
  }

  ag::Var<T> operator()(const ag::Var<T>& r_low, const ag::Var<T>& illumination, ClampMode mode) const {
    const Shape sr = r_low.shape();
    const Shape si = illumination.shape();
    if (sr.c != 3 || si.c != 1 || sr.n != si.n || sr.h != si.h || sr.w != si.w) {
      throw ValidationError("enhance_reflectance: reflectance " + to_string(sr) + " and illumination " +
                            to_string(si) + " are incompatible");
    }
    ag::Var<T> r = embed_r_(r_low);
    ag::Var<T> i = embed_i_(illumination);
    for (const auto& b : blocks_) r = b(r, i, fusion_);
    ag::Var<T> out = ag::add(r_low, head_(r));
    return mode == ClampMode::kTraining ? ag::soft_clamp(out, T(0), T(1), T(100)) : ag::clamp(out, T(0), T(1));
  }

  [[nodiscard]] Fusion fusion() const { return fusion_; }
  [[nodiscard]] const std::vector<IreBlock<T>>& blocks() const { return blocks_; }
  [[nodiscard]] const nn::Conv2d<T>& embed_r() const { return embed_r_; }
  [[nodiscard]] const nn::Conv2d<T>& embed_i() const { return embed_i_; }

  void collect(nn::ParamList<T>& out, const std::string& prefix) const {
    embed_r_.collect(out, prefix + ".embed_r");
    embed_i_.collect(out, prefix + ".embed_i");
    for (std::size_t b = 0; b < blocks_.size(); ++b) blocks_[b].collect(out, prefix + ".block" + std::to_string(b));
    head_.collect(out, prefix + ".head");
  }

 private:
  Fusion fusion_ = Fusion::kCrossAttention;
  nn::Conv2d<T> embed_r_, embed_i_, head_;
  std::vector<IreBlock<T>> blocks_;
};

/// S_hat(x, y, ch) = I(x, y) * R(x, y, ch).
template <class T>
ag::Var<T> reconstruct(const ag::Var<T>& illumination, const ag::Var<T>& reflectance) {
  return ag::mul(reflectance, illumination);
}

}  // namespace retinev
