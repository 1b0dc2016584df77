// Copyright 2026 The retinev Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "retinev/binary_io.hpp"
#include "retinev/losses.hpp"
#include "retinev/model.hpp"

// Run configuration: an INI file with [data], [sensor], [lldm], [model],
// [loss] and [train] sections. Every error names the offending field path.

namespace retinev {

enum class DataMode { kSynthetic, kPaired };

struct DataConfig {
  DataMode mode = DataMode::kSynthetic;
  std::filesystem::path root;    // paired: holds low/ and high/; synthetic: holds GT images
  std::string low_dir = "low";   // paired mode only
  std::string high_dir = "high";
  Range exposure{0.05, 0.3};     // synthetic mode darkening factor

  friend bool operator==(const DataConfig&, const DataConfig&) = default;
};

struct TrainConfig {
  int patch_size = 32;
  int batch_size = 8;
  long iters_pretrain = 2000;
  long iters_main = 2000;
  double lr_main = 2e-4;
  double lr_min = 1e-7;
  double lr_denoiser_scale = 0.1;
  double grad_clip = 1.0;
  long checkpoint_every = 500;
  std::uint64_t seed = 0;

  /// Full-scale schedule: 128 px patches, batch 32, 150k main and 100k pretraining iterations.
  static TrainConfig paper_scale() {
    TrainConfig t;
    t.patch_size = 128;
    t.batch_size = 32;
    t.iters_pretrain = 100000;
    t.iters_main = 150000;
    return t;
  }

  void validate() const {
    if (patch_size < 8) throw ConfigError("train.patch_size: must be >= 8");
    if (batch_size < 1) throw ConfigError("train.batch_size: must be >= 1");
    if (iters_pretrain < 0) throw ConfigError("train.iters_pretrain: must be >= 0");
    if (iters_main < 0) throw ConfigError("train.iters_main: must be >= 0");
    if (!(lr_min > 0)) throw ConfigError("train.lr_min: must be > 0");
    if (!(lr_main > lr_min)) throw ConfigError("train.lr_main: must exceed train.lr_min");
    if (!(lr_denoiser_scale > 0 && lr_denoiser_scale <= 1)) {
      throw ConfigError("train.lr_denoiser_scale: must lie in (0, 1]");
    }
    if (!(grad_clip > 0)) throw ConfigError("train.grad_clip: must be > 0");
    if (checkpoint_every < 1) throw ConfigError("train.checkpoint_every: must be >= 1");
  }

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

struct RunConfig {
  DataConfig data;
  SensorConstants sensor;
  DegradationConfig lldm;
  ModelConfig model;
  LossWeights loss;
  std::uint64_t extractor_seed = kDefaultExtractorSeed;
  TrainConfig train;

  void validate() const {
    if (data.exposure.lo <= 0 || data.exposure.hi > 1 || data.exposure.lo > data.exposure.hi) {
      throw ConfigError("data.exposure: need 0 < lo <= hi <= 1");
    }
    if (data.mode == DataMode::kPaired && (data.low_dir.empty() || data.high_dir.empty())) {
      throw ConfigError("data.low_dir: paired mode needs low_dir and high_dir");
    }
    try {
      sensor.validate();
    } catch (const ValidationError& e) {
      throw ConfigError(std::string("sensor: ") + e.what());
    }
    try {
      lldm.validate();
    } catch (const ValidationError& e) {
      throw ConfigError(e.what());
    }
    model.validate();
    try {
      loss.validate();
    } catch (const ConfigError& e) {
      throw ConfigError(std::string("loss.") + e.what());
    }
    train.validate();
  }
};

/// Sets every seed (training, model initialization, degradation) at once.
inline void apply_seed(RunConfig& c, std::uint64_t seed) {
  c.train.seed = seed;
  c.model.seed = seed;
  c.lldm.seed = seed;
}

namespace detail {

inline std::string fmt_double(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

inline std::string fmt_range(const Range& r) { return fmt_double(r.lo) + "," + fmt_double(r.hi); }

class IniReader {
 public:
  explicit IniReader(boost::property_tree::ptree tree) : tree_(std::move(tree)) {}

  template <class U>
  void get(const std::string& path, U& out) {
    used_.insert(path);
    auto node = tree_.get_optional<std::string>(path);
    if (!node) return;
    out = parse<U>(path, *node);
  }

  void get_range(const std::string& path, Range& out) {
    used_.insert(path);
    auto node = tree_.get_optional<std::string>(path);
    if (!node) return;
    const auto comma = node->find(',');
    if (comma == std::string::npos) throw ConfigError(path + ": expected 'lo,hi'");
    out.lo = parse<double>(path, node->substr(0, comma));
    out.hi = parse<double>(path, node->substr(comma + 1));
  }

  /// Rejects keys nobody asked for, so typos do not pass silently.
  void reject_unknown() const {
    for (const auto& [section, body] : tree_) {
      if (body.empty() && !body.data().empty()) throw ConfigError(section + ": key outside any section");
      for (const auto& [key, value] : body) {
        const std::string path = section + "." + key;
        if (!used_.count(path)) throw ConfigError(path + ": unknown setting");
      }
    }
  }

 private:
  template <class U>
  static U parse(const std::string& path, std::string text) {
    while (!text.empty() && std::isspace(static_cast<unsigned char>(text.back()))) text.pop_back();
    while (!text.empty() && std::isspace(static_cast<unsigned char>(text.front()))) text.erase(0, 1);
    if constexpr (std::is_same_v<U, std::string>) {
      return text;
    } else if constexpr (std::is_same_v<U, std::filesystem::path>) {
      return std::filesystem::path(text);
    } else {
      U v{};
      const char* end = text.data() + text.size();
      auto [ptr, ec] = std::from_chars(text.data(), end, v);
      if (ec != std::errc() || ptr != end || text.empty()) throw ConfigError(path + ": cannot parse '" + text + "'");
      return v;
    }
  }

  boost::property_tree::ptree tree_;
  std::set<std::string> used_;
};

}  // namespace detail

/// Parses INI text; unspecified keys keep their defaults. Relative data paths
/// resolve against `base_dir`.
inline RunConfig parse_config(const std::string& text, const std::filesystem::path& base_dir = {},
                              std::optional<std::uint64_t> default_seed = std::nullopt) {
  boost::property_tree::ptree tree;
  std::istringstream in(text);
  try {
    boost::property_tree::ini_parser::read_ini(in, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw ConfigError("config syntax error at line " + std::to_string(e.line()) + ": " + e.message());
  }
  detail::IniReader r(std::move(tree));
  RunConfig c;
  if (default_seed) apply_seed(c, *default_seed);

  std::string mode = "synthetic";
  r.get("data.mode", mode);
  if (mode == "synthetic") {
    c.data.mode = DataMode::kSynthetic;
  } else if (mode == "paired") {
    c.data.mode = DataMode::kPaired;
  } else {
    throw ConfigError("data.mode: expected synthetic or paired, got '" + mode + "'");
  }
  r.get("data.root", c.data.root);
  if (!c.data.root.empty() && c.data.root.is_relative() && !base_dir.empty()) c.data.root = base_dir / c.data.root;
  r.get("data.low_dir", c.data.low_dir);
  r.get("data.high_dir", c.data.high_dir);
  r.get_range("data.exposure", c.data.exposure);

  r.get("sensor.eta", c.sensor.eta);
  r.get("sensor.area", c.sensor.area);
  r.get("sensor.capacitance", c.sensor.capacitance);
  r.get("sensor.threshold_voltage", c.sensor.threshold_voltage);

  r.get_range("lldm.blur_sigma", c.lldm.blur_sigma);
  r.get_range("lldm.downsample_factor", c.lldm.downsample_factor);
  r.get_range("lldm.poisson_scale", c.lldm.poisson_scale);
  r.get_range("lldm.gauss_sigma", c.lldm.gauss_sigma);
  r.get_range("lldm.latency_alpha", c.lldm.latency_alpha);
  r.get("lldm.dead_pixel_max_prob", c.lldm.dead_pixel_max_prob);
  r.get("lldm.threshold_mu", c.lldm.threshold_mu);
  r.get("lldm.threshold_sigma", c.lldm.threshold_sigma);
  r.get("lldm.seed", c.lldm.seed);

  r.get("model.denoiser_width", c.model.denoiser_width);
  r.get("model.mlp_hidden", c.model.mlp_hidden);
  r.get("model.gamma", c.model.gamma);
  r.get("model.illumination_floor", c.model.illumination_floor);
  r.get("model.decom_width", c.model.decom_width);
  r.get("model.decom_layers", c.model.decom_layers);
  r.get("model.ire_channels", c.model.ire_channels);
  r.get("model.ire_heads", c.model.ire_heads);
  r.get("model.ire_blocks", c.model.ire_blocks);
  r.get("model.ire_expansion", c.model.ire_expansion);
  std::string fusion = to_string(c.model.fusion);
  r.get("model.fusion", fusion);
  try {
    c.model.fusion = fusion_from_string(fusion);
  } catch (const ValidationError& e) {
    throw ConfigError(std::string("model.fusion: ") + e.what());
  }
  r.get("model.seed", c.model.seed);

  r.get("loss.lambda_recon", c.loss.recon);
  r.get("loss.lambda_reflectance", c.loss.reflectance);
  r.get("loss.lambda_perceptual", c.loss.perceptual);
  std::string extractor = "random_pyramid";
  r.get("loss.extractor", extractor);
  if (extractor != "random_pyramid") throw ConfigError("loss.extractor: only random_pyramid is available");
  r.get("loss.extractor_seed", c.extractor_seed);

  std::string preset = "desk";
  r.get("train.preset", preset);
  if (preset == "paper") {
    c.train = TrainConfig::paper_scale();
    if (default_seed) c.train.seed = *default_seed;
  } else if (preset != "desk") {
    throw ConfigError("train.preset: expected desk or paper, got '" + preset + "'");
  }
  r.get("train.patch_size", c.train.patch_size);
  r.get("train.batch_size", c.train.batch_size);
  r.get("train.iters_pretrain", c.train.iters_pretrain);
  r.get("train.iters_main", c.train.iters_main);
  r.get("train.lr_main", c.train.lr_main);
  r.get("train.lr_min", c.train.lr_min);
  r.get("train.lr_denoiser_scale", c.train.lr_denoiser_scale);
  r.get("train.grad_clip", c.train.grad_clip);
  r.get("train.checkpoint_every", c.train.checkpoint_every);
  r.get("train.seed", c.train.seed);

  r.reject_unknown();
  c.validate();
  return c;
}

inline RunConfig load_config(const std::filesystem::path& path,
                             std::optional<std::uint64_t> default_seed = std::nullopt) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), path.parent_path(), default_seed);
}

/// Canonical "key=value" listing of every setting that influences the trained
/// weights. Data locations are excluded so a run can move between machines.
inline std::string canonical_string(const RunConfig& c) {
  using detail::fmt_double;
  using detail::fmt_range;
  std::ostringstream o;
  o << "version=1\n";
  o << "data.mode=" << (c.data.mode == DataMode::kSynthetic ? "synthetic" : "paired") << '\n'
    << "data.exposure=" << fmt_range(c.data.exposure) << '\n'
    << "sensor=" << fmt_double(c.sensor.eta) << ',' << fmt_double(c.sensor.area) << ','
    << fmt_double(c.sensor.capacitance) << ',' << fmt_double(c.sensor.threshold_voltage) << '\n'
    << "lldm.blur_sigma=" << fmt_range(c.lldm.blur_sigma) << '\n'
    << "lldm.downsample_factor=" << fmt_range(c.lldm.downsample_factor) << '\n'
    << "lldm.poisson_scale=" << fmt_range(c.lldm.poisson_scale) << '\n'
    << "lldm.gauss_sigma=" << fmt_range(c.lldm.gauss_sigma) << '\n'
    << "lldm.latency_alpha=" << fmt_range(c.lldm.latency_alpha) << '\n'
    << "lldm.dead_pixel_max_prob=" << fmt_double(c.lldm.dead_pixel_max_prob) << '\n'
    << "lldm.threshold=" << fmt_double(c.lldm.threshold_mu) << ',' << fmt_double(c.lldm.threshold_sigma) << '\n'
    << "lldm.seed=" << c.lldm.seed << '\n'
    << model_config_string(c.model)
    << "loss=" << fmt_double(c.loss.recon) << ',' << fmt_double(c.loss.reflectance) << ','
    << fmt_double(c.loss.perceptual) << ',' << c.extractor_seed << '\n'
    << "train.patch_size=" << c.train.patch_size << '\n'
    << "train.batch_size=" << c.train.batch_size << '\n'
    << "train.iters=" << c.train.iters_pretrain << ',' << c.train.iters_main << '\n'
    << "train.lr=" << fmt_double(c.train.lr_main) << ',' << fmt_double(c.train.lr_min) << ','
    << fmt_double(c.train.lr_denoiser_scale) << '\n'
    << "train.grad_clip=" << fmt_double(c.train.grad_clip) << '\n'
    << "train.seed=" << c.train.seed << '\n';
  return o.str();
}

inline std::uint64_t config_hash(const RunConfig& c) { return io::fnv1a(canonical_string(c)); }

}  // namespace retinev
