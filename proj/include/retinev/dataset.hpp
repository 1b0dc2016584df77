// Copyright 2026 The retinev Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <string>
#include <vector>

#include <json.hpp>

#include "retinev/event_io.hpp"
#include "retinev/image_io.hpp"
#include "retinev/lldm.hpp"

// Paired low/normal-light datasets and the procedural benchmark.

namespace retinev {

namespace fs = std::filesystem;

struct ImagePair {
  std::string name;  // shared file name
  fs::path low;
  fs::path high;
};

struct PairedDataset {
  std::vector<ImagePair> pairs;
  std::string split;
};

namespace detail {

inline bool is_png(const fs::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char ch) { return std::tolower(ch); });
  return ext == ".png";
}

/// Sorted file names of the PNG images directly inside `dir`.
inline std::vector<std::string> list_images(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw IoError("not a directory: " + dir.string());
  std::vector<std::string> names;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file() && is_png(e.path())) names.push_back(e.path().filename().string());
  }
  std::sort(names.begin(), names.end());
  return names;
}

/// Width and height from the PNG IHDR chunk without decoding pixels.
inline std::pair<int, int> png_size(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  unsigned char h[24] = {};
  if (!in.read(reinterpret_cast<char*>(h), 24) || std::string(reinterpret_cast<char*>(h + 12), 4) != "IHDR") {
    throw IoError("not a PNG file: " + p.string());
  }
  auto be32 = [](const unsigned char* b) {
    return static_cast<int>((std::uint32_t{b[0]} << 24) | (std::uint32_t{b[1]} << 16) | (std::uint32_t{b[2]} << 8) | b[3]);
  };
  return {be32(h + 16), be32(h + 20)};
}

}  // namespace detail

/// Pairs `root/low_dir/NAME` with `root/high_dir/NAME` in lexicographic order.
/// Any file without a counterpart, or a pair with differing sizes, is an error.
inline PairedDataset load_paired_dataset(const fs::path& root, const std::string& low_dir = "low",
                                         const std::string& high_dir = "high", const std::string& split = "") {
  const fs::path lo = root / low_dir;
  const fs::path hi = root / high_dir;
  const auto lows = detail::list_images(lo);
  const auto highs = detail::list_images(hi);
  std::vector<std::string> orphans;
  std::set_symmetric_difference(lows.begin(), lows.end(), highs.begin(), highs.end(), std::back_inserter(orphans));
  if (!orphans.empty()) {
    const bool in_low = std::binary_search(lows.begin(), lows.end(), orphans.front());
    throw ValidationError("unpaired image " + ((in_low ? lo : hi) / orphans.front()).string() + ": no counterpart in " +
                          (in_low ? hi : lo).string());
  }
  PairedDataset ds;
  ds.split = split;
  for (const auto& name : lows) {
    ImagePair p{name, lo / name, hi / name};
    if (detail::png_size(p.low) != detail::png_size(p.high)) {
      throw ValidationError("image pair " + name + " differs in size between " + low_dir + " and " + high_dir);
    }
    ds.pairs.push_back(std::move(p));
  }
  return ds;
}

/// One procedural scene: gradient background, textured rectangles, discs and
/// stripes, gamma-encoded values in [0.03, 0.97].
inline EncodedRaster render_scene(int size, Rng& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  auto color = [&] {
    return std::array<double, 3>{0.1 + 0.85 * u(rng), 0.1 + 0.85 * u(rng), 0.1 + 0.85 * u(rng)};
  };
  const std::size_t P = static_cast<std::size_t>(size) * size;
  std::vector<double> img(3 * P);
  const auto c0 = color();
  const auto c1 = color();
  const double angle = 2 * std::numbers::pi * u(rng);
  const double dx = std::cos(angle);
  const double dy = std::sin(angle);
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      const double s = std::clamp(0.5 + ((x - size / 2.0) * dx + (y - size / 2.0) * dy) / size, 0.0, 1.0);
      for (int c = 0; c < 3; ++c) img[c * P + y * size + x] = c0[c] * (1 - s) + c1[c] * s;
    }
  const int shapes = 3 + static_cast<int>(u(rng) * 4);
  for (int k = 0; k < shapes; ++k) {
    const int kind = static_cast<int>(u(rng) * 3);
    const auto col = color();
    const auto alt = color();
    const double cx = u(rng) * size;
    const double cy = u(rng) * size;
    const double rx = (0.1 + 0.3 * u(rng)) * size;
    const double ry = (0.1 + 0.3 * u(rng)) * size;
    const double freq = 2 * std::numbers::pi / (3 + 6 * u(rng));
    const bool textured = u(rng) < 0.5;
    for (int y = 0; y < size; ++y)
      for (int x = 0; x < size; ++x) {
        const double ox = (x - cx) / rx;
        const double oy = (y - cy) / ry;
        bool inside = false;
        if (kind == 0) inside = std::abs(ox) <= 1 && std::abs(oy) <= 1;
        if (kind == 1) inside = ox * ox + oy * oy <= 1;
        if (kind == 2) inside = std::abs(oy) <= 0.3;
        if (!inside) continue;
        const double t = textured ? 0.5 + 0.5 * std::sin(freq * (x + 0.5 * y)) : 0.0;
        for (int c = 0; c < 3; ++c) img[c * P + y * size + x] = col[c] * (1 - t) + alt[c] * t;
      }
  }
  for (auto& v : img) v = std::clamp(v, 0.03, 0.97);
  return {size, size, 3, std::move(img)};
}

inline constexpr std::uint64_t kScenePurpose = 21;
inline constexpr std::uint64_t kLowLightPurpose = 22;
inline constexpr std::uint64_t kBenchThresholdPurpose = 23;

struct BenchmarkSpec {
  int count = 4;
  int size = 64;
  std::uint64_t seed = 0;
  Range exposure{0.05, 0.3};
  SensorConstants sensor;
  DegradationConfig noise;  // only the Poisson and Gaussian ranges are used
};

/// Scene-level FPE map: thresholds drawn per pixel from the test-time
/// distribution using the scene's stream, no other degradation.
inline FpeMap benchmark_fpe(const EncodedRaster& gt, const BenchmarkSpec& spec, std::uint64_t index) {
  Rng rng = derive_stream(spec.seed, index, kBenchThresholdPurpose);
  const ThresholdField c = sample_thresholds(gt.width(), gt.height(), kTestThresholdMu, kTestThresholdSigma, rng);
  return quantize_to_fpe1(simulate_fpe_map(gamma_decode(gt), spec.sensor, c));
}

inline std::string scene_name(std::uint64_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "scene_%03llu", static_cast<unsigned long long>(index));
  return buf;
}

/// Writes high/, low/ (16-bit PNG), fpe/ (FPE1) and manifest.json into `out`,
/// which must not exist yet. Everything is staged in a sibling directory and
/// renamed into place at the end.
inline void build_synthetic_benchmark(const BenchmarkSpec& spec, const fs::path& out) {
  if (spec.count < 1) throw ValidationError("build_synthetic_benchmark: need at least one scene");
  if (spec.size < 16) throw ValidationError("build_synthetic_benchmark: size must be >= 16");
  spec.noise.validate();
  spec.sensor.validate();
  if (fs::exists(out)) throw IoError("output already exists: " + out.string());
  fs::path stage = out;
  stage += ".partial";
  fs::remove_all(stage);
  fs::create_directories(stage / "high");
  fs::create_directories(stage / "low");
  fs::create_directories(stage / "fpe");
  nlohmann::ordered_json manifest;
  manifest["format"] = "retinev-benchmark-1";
  manifest["count"] = spec.count;
  manifest["size"] = spec.size;
  manifest["seed"] = spec.seed;
  manifest["gamma"] = kDefaultGamma;
  manifest["exposure"] = {spec.exposure.lo, spec.exposure.hi};
  manifest["threshold_mu"] = kTestThresholdMu;
  manifest["threshold_sigma"] = kTestThresholdSigma;
  manifest["sensor"] = {{"eta", spec.sensor.eta},
                        {"area", spec.sensor.area},
                        {"capacitance", spec.sensor.capacitance},
                        {"threshold_voltage", spec.sensor.threshold_voltage}};
  manifest["scenes"] = nlohmann::ordered_json::array();
  try {
    for (int i = 0; i < spec.count; ++i) {
      const auto idx = static_cast<std::uint64_t>(i);
      const std::string name = scene_name(idx);
      Rng scene_rng = derive_stream(spec.seed, idx, kScenePurpose);
      const fs::path high = stage / "high" / (name + ".png");
      save_image(render_scene(spec.size, scene_rng), high, 16);
      const EncodedRaster gt = load_image(high);  // quantized exactly as stored
      Rng low_rng = derive_stream(spec.seed, idx, kLowLightPurpose);
      const LinearRaster low = synthesize_low_light(gamma_decode(gt), spec.exposure, spec.noise, low_rng);
      save_image(gamma_encode(low), stage / "low" / (name + ".png"), 16);
      write_fpe1(benchmark_fpe(gt, spec, idx), stage / "fpe" / (name + ".fpe"));
      manifest["scenes"].push_back({{"name", name}, {"index", i}});
    }
    std::ofstream mf(stage / "manifest.json");
    mf << manifest.dump(2) << '\n';
    if (!mf) throw IoError("cannot write manifest in " + stage.string());
  } catch (...) {
    fs::remove_all(stage);
    throw;
  }
  fs::rename(stage, out);
}

}  // namespace retinev
