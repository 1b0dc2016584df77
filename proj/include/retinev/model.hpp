// Copyright 2026 The retinev Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <set>
#include <sstream>
#include <string>

#include "retinev/lldm.hpp"
#include "retinev/retinex.hpp"
#include "retinev/t2i.hpp"

// The full network: time-to-illumination, shared-weight decomposition and the
// reflectance enhancer, plus raster-level entry points.

namespace retinev {

struct ModelConfig {
  int denoiser_width = 16;
  int mlp_hidden = 16;
  double gamma = kDefaultGamma;
  double illumination_floor = kIlluminationFloor;
  int decom_width = 32;
  int decom_layers = 5;
  int ire_channels = 32;
  int ire_heads = 4;
  int ire_blocks = 2;
  int ire_expansion = 2;
  Fusion fusion = Fusion::kCrossAttention;
  std::uint64_t seed = 0;

  void validate() const {
    auto positive = [](int v, const char* field) {
      if (v <= 0) throw ConfigError(std::string("model.") + field + ": must be > 0");
    };
    positive(denoiser_width, "denoiser_width");
    positive(mlp_hidden, "mlp_hidden");
    positive(decom_width, "decom_width");
    positive(ire_channels, "ire_channels");
    positive(ire_heads, "ire_heads");
    positive(ire_blocks, "ire_blocks");
    positive(ire_expansion, "ire_expansion");
    if (decom_layers < 2) throw ConfigError("model.decom_layers: must be >= 2");
    if (ire_channels % ire_heads != 0) throw ConfigError("model.ire_heads: must divide model.ire_channels");
    if (!(gamma > 0) || !std::isfinite(gamma)) throw ConfigError("model.gamma: must be > 0");
    if (!(illumination_floor > 0 && illumination_floor < 1)) {
      throw ConfigError("model.illumination_floor: must lie in (0, 1)");
    }
  }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// One "model.key=value" line per field; parse_model_config inverts it exactly.
inline std::string model_config_string(const ModelConfig& m) {
  std::ostringstream o;
  o.precision(17);
  o << "model.denoiser_width=" << m.denoiser_width << '\n'
    << "model.mlp_hidden=" << m.mlp_hidden << '\n'
    << "model.gamma=" << m.gamma << '\n'
    << "model.illumination_floor=" << m.illumination_floor << '\n'
    << "model.decom_width=" << m.decom_width << '\n'
    << "model.decom_layers=" << m.decom_layers << '\n'
    << "model.ire_channels=" << m.ire_channels << '\n'
    << "model.ire_heads=" << m.ire_heads << '\n'
    << "model.ire_blocks=" << m.ire_blocks << '\n'
    << "model.ire_expansion=" << m.ire_expansion << '\n'
    << "model.fusion=" << to_string(m.fusion) << '\n'
    << "model.seed=" << m.seed << '\n';
  return o.str();
}

inline ModelConfig parse_model_config(const std::string& text) {
  ModelConfig m;
  std::istringstream in(text);
  std::string line;
  std::set<std::string> seen;
  while (std::getline(in, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw CorruptFileError("model config: malformed line '" + line + "'");
    const std::string key = line.substr(0, eq);
    std::istringstream val(line.substr(eq + 1));
    bool ok = true;
    if (key == "model.denoiser_width") ok = static_cast<bool>(val >> m.denoiser_width);
    else if (key == "model.mlp_hidden") ok = static_cast<bool>(val >> m.mlp_hidden);
    else if (key == "model.gamma") ok = static_cast<bool>(val >> m.gamma);
    else if (key == "model.illumination_floor") ok = static_cast<bool>(val >> m.illumination_floor);
    else if (key == "model.decom_width") ok = static_cast<bool>(val >> m.decom_width);
    else if (key == "model.decom_layers") ok = static_cast<bool>(val >> m.decom_layers);
    else if (key == "model.ire_channels") ok = static_cast<bool>(val >> m.ire_channels);
    else if (key == "model.ire_heads") ok = static_cast<bool>(val >> m.ire_heads);
    else if (key == "model.ire_blocks") ok = static_cast<bool>(val >> m.ire_blocks);
    else if (key == "model.ire_expansion") ok = static_cast<bool>(val >> m.ire_expansion);
    else if (key == "model.fusion") m.fusion = fusion_from_string(val.str());
    else if (key == "model.seed") ok = static_cast<bool>(val >> m.seed);
    else throw CorruptFileError("model config: unknown key '" + key + "'");
    if (!ok) throw CorruptFileError("model config: bad value for " + key);
    seen.insert(key);
  }
  if (seen.size() != 12) throw CorruptFileError("model config: incomplete");
  try {
    m.validate();
  } catch (const ConfigError& e) {
    throw CorruptFileError(std::string("model config: ") + e.what());
  }
  return m;
}

enum class StreamPurpose : std::uint64_t { kT2i = 11, kDecom = 12, kIre = 13 };

template <class T>
struct ForwardResult {
  ag::Var<T> illumination;  // [N,1,H,W]
  ag::Var<T> r_low;         // [N,3,H,W]
  ag::Var<T> r_hat;         // enhanced low-light reflectance
  ag::Var<T> r_normal;      // only set by forward_train
  ag::Var<T> enhanced;      // illumination * r_hat
};

template <class T>
class RetinexModel {
 public:
  explicit RetinexModel(const ModelConfig& cfg) : cfg_(cfg) {
    cfg_.validate();
    Rng r1 = derive_stream(cfg.seed, 0, static_cast<std::uint64_t>(StreamPurpose::kT2i));
    Rng r2 = derive_stream(cfg.seed, 0, static_cast<std::uint64_t>(StreamPurpose::kDecom));
    Rng r3 = derive_stream(cfg.seed, 0, static_cast<std::uint64_t>(StreamPurpose::kIre));
    t2i_ = TimeToIllumination<T>(cfg.denoiser_width, cfg.mlp_hidden, cfg.gamma, cfg.illumination_floor, r1);
    decom_ = DecompositionNet<T>(cfg.decom_width, cfg.decom_layers, r2);
    ire_ = ReflectanceEnhancer<T>(cfg.ire_channels, cfg.ire_heads, cfg.ire_blocks, cfg.ire_expansion, cfg.fusion, r3);
  }

  [[nodiscard]] const ModelConfig& config() const { return cfg_; }
  [[nodiscard]] const TimeToIllumination<T>& t2i() const { return t2i_; }
  [[nodiscard]] const DecompositionNet<T>& decom() const { return decom_; }
  [[nodiscard]] const ReflectanceEnhancer<T>& ire() const { return ire_; }

  /// Every trainable tensor, in a fixed order, named "t2i.*", "decom.*" or "ire.*".
  [[nodiscard]] nn::ParamList<T> parameters() const {
    nn::ParamList<T> out;
    t2i_.collect(out, "t2i");
    decom_.collect(out, "decom");
    ire_.collect(out, "ire");
    return out;
  }

  [[nodiscard]] nn::ParamList<T> denoiser_parameters() const {
    nn::ParamList<T> out;
    t2i_.denoiser().collect(out, "t2i.denoiser");
    return out;
  }

  static bool is_denoiser_param(const std::string& name) { return name.rfind("t2i.denoiser.", 0) == 0; }

  /// Both branches: decomposition of the low and normal images under one
  /// illumination estimate, then enhancement of the low reflectance.
  ForwardResult<T> forward_train(const ag::Var<T>& e_input, const ag::Var<T>& s_low, const ag::Var<T>& s_normal,
                                 ClampMode mode = ClampMode::kTraining) const {
    ForwardResult<T> r = forward(e_input, s_low, mode);
    r.r_normal = decom_(s_normal, r.illumination);
    return r;
  }

  ForwardResult<T> forward(const ag::Var<T>& e_input, const ag::Var<T>& s_low,
                           ClampMode mode = ClampMode::kInference) const {
    ForwardResult<T> r;
    r.illumination = t2i_(e_input, mode);
    r.r_low = decom_(s_low, r.illumination);
    r.r_hat = ire_(r.r_low, r.illumination, mode);
    r.enhanced = reconstruct(r.illumination, r.r_hat);
    return r;
  }

 private:
  ModelConfig cfg_;
  TimeToIllumination<T> t2i_;
  DecompositionNet<T> decom_;
  ReflectanceEnhancer<T> ire_;
};

/// Three-channel reflectance with values in [0, 1].
class ReflectanceMap {
 public:
  ReflectanceMap(int width, int height, std::vector<double> v) : raster_(width, height, 3, std::move(v)) {}
  explicit ReflectanceMap(LinearRaster r) : raster_(std::move(r)) {
    if (raster_.channels() != 3) throw ValidationError("ReflectanceMap: needs 3 channels");
  }
  [[nodiscard]] int width() const { return raster_.width(); }
  [[nodiscard]] int height() const { return raster_.height(); }
  [[nodiscard]] const std::vector<double>& values() const { return raster_.data(); }
  [[nodiscard]] const LinearRaster& raster() const { return raster_; }

 private:
  LinearRaster raster_;
};

namespace detail {

template <class T>
ag::Var<T> illumination_var(const IlluminationEstimate& i) {
  Tensor<T> t({1, 1, i.height(), i.width()});
  for (std::size_t k = 0; k < t.size(); ++k) t[k] = static_cast<T>(i[k]);
  return ag::Var<T>(std::move(t));
}

template <class T>
IlluminationEstimate illumination_from_tensor(const Tensor<T>& t, double floor) {
  std::vector<double> v(t.shape().plane());
  for (std::size_t k = 0; k < v.size(); ++k) v[k] = std::clamp(static_cast<double>(t[k]), floor, 1.0);
  return {t.w(), t.h(), std::move(v), floor};
}

inline void check_same_size(int w1, int h1, int w2, int h2, const char* what) {
  if (w1 != w2 || h1 != h2) {
    throw ValidationError(std::string(what) + ": size " + std::to_string(w1) + "x" + std::to_string(h1) +
                          " does not match " + std::to_string(w2) + "x" + std::to_string(h2));
  }
}

}  // namespace detail

/// Normalizes an FPE map with `beta` and runs the time-to-illumination module.
template <class T>
IlluminationEstimate estimate_illumination(const FpeMap& m, double beta, const SensorConstants& sensor,
                                           const RetinexModel<T>& model) {
  ag::NoGradGuard guard;
  const ag::Var<T> e(illumination_input<T>(beta_normalize(m, beta), sensor.k()));
  return detail::illumination_from_tensor(model.t2i()(e, ClampMode::kInference).value(),
                                          model.config().illumination_floor);
}

template <class T>
ReflectanceMap decompose(const LinearRaster& image, const IlluminationEstimate& illumination,
                         const DecompositionNet<T>& net) {
  if (image.channels() != 3) throw ValidationError("decompose: image must have 3 channels");
  detail::check_same_size(image.width(), image.height(), illumination.width(), illumination.height(), "decompose");
  ag::NoGradGuard guard;
  const ag::Var<T> s(to_tensor<T>(image));
  return ReflectanceMap(linear_from_tensor(net(s, detail::illumination_var<T>(illumination)).value()));
}

template <class T>
ReflectanceMap enhance_reflectance(const ReflectanceMap& r_low, const IlluminationEstimate& illumination,
                                   const ReflectanceEnhancer<T>& ire) {
  detail::check_same_size(r_low.width(), r_low.height(), illumination.width(), illumination.height(),
                          "enhance_reflectance");
  ag::NoGradGuard guard;
  const ag::Var<T> r(to_tensor<T>(r_low.raster()));
  return ReflectanceMap(
      linear_from_tensor(ire(r, detail::illumination_var<T>(illumination), ClampMode::kInference).value()));
}

/// Exact elementwise product in double precision.
inline LinearRaster reconstruct(const IlluminationEstimate& illumination, const ReflectanceMap& r) {
  detail::check_same_size(r.width(), r.height(), illumination.width(), illumination.height(), "reconstruct");
  const std::size_t P = static_cast<std::size_t>(r.width()) * r.height();
  std::vector<double> out(3 * P);
  for (int c = 0; c < 3; ++c)
    for (std::size_t i = 0; i < P; ++i) out[c * P + i] = illumination[i] * r.values()[c * P + i];
  return {r.width(), r.height(), 3, std::move(out)};
}

template <class T>
struct Enhancement {
  IlluminationEstimate illumination;
  ReflectanceMap r_low;
  ReflectanceMap r_hat;
  LinearRaster enhanced;
};

/// Full inference: FPE map + low-light image -> enhanced linear image.
template <class T>
Enhancement<T> enhance(const RetinexModel<T>& model, const LinearRaster& low, const FpeMap& m, double beta,
                       const SensorConstants& sensor) {
  if (low.channels() != 3) throw ValidationError("enhance: low-light image must have 3 channels");
  detail::check_same_size(low.width(), low.height(), m.width(), m.height(), "enhance");
  ag::NoGradGuard guard;
  const ag::Var<T> e(illumination_input<T>(beta_normalize(m, beta), sensor.k()));
  const ag::Var<T> s(to_tensor<T>(low));
  const ForwardResult<T> f = model.forward(e, s, ClampMode::kInference);
  const double floor = model.config().illumination_floor;
  return {detail::illumination_from_tensor(f.illumination.value(), floor),
          ReflectanceMap(linear_from_tensor(f.r_low.value())), ReflectanceMap(linear_from_tensor(f.r_hat.value())),
          linear_from_tensor(f.enhanced.value())};
}

}  // namespace retinev
