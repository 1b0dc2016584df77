// Copyright 2026 The retinev Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "retinev/lldm.hpp"

namespace retinev {
namespace {

EncodedRaster random_encoded(int w, int h, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.02, 1.0);
  std::vector<double> d(static_cast<std::size_t>(w) * h * 3);
  for (auto& v : d) v = u(rng);
  return {w, h, 3, std::move(d)};
}

FpeMap random_fpe(int w, int h, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(1.0, 2000.0);
  std::vector<double> t(static_cast<std::size_t>(w) * h);
  for (auto& v : t) v = u(rng);
  return {w, h, std::move(t)};
}

DegradationConfig only_dead_pixels() {
  DegradationConfig c = DegradationConfig::identity();
  c.dead_pixel_max_prob = 0.05;
  return c;
}

TEST(Lldm, IdentityConfigIsBitExactNoOp) {
  std::mt19937_64 rng(1);
  const EncodedRaster gt = random_encoded(17, 11, rng);
  const DegradationConfig id = DegradationConfig::identity(99);
  Rng r(5);
  EXPECT_EQ(degrade_spatial(gamma_decode(gt), id, r), gamma_decode(gt));
  const FpeMap m = random_fpe(17, 11, rng);
  const FpeMap out = degrade_temporal(m, id, r);
  for (std::size_t i = 0; i < m.size(); ++i) EXPECT_EQ(out[i], m[i]);
  const TrainingSample s = synthesize_training_sample(gt, SensorConstants{}, id, 3);
  EXPECT_EQ(s.fpe, clean_fpe_map(gamma_decode(gt), SensorConstants{}, id.threshold_mu));
  EXPECT_EQ(s.gt_linear, gamma_decode(gt));
}

TEST(Lldm, SynthesisIsPureInSeedAndIndex) {
  std::mt19937_64 rng(2);
  const EncodedRaster gt = random_encoded(16, 16, rng);
  DegradationConfig cfg;
  cfg.seed = 42;
  const auto a = synthesize_training_sample(gt, SensorConstants{}, cfg, 7);
  const auto b = synthesize_training_sample(gt, SensorConstants{}, cfg, 7);
  const auto c = synthesize_training_sample(gt, SensorConstants{}, cfg, 8);
  EXPECT_EQ(a.fpe, b.fpe);
  EXPECT_FALSE(a.fpe == c.fpe);
}

TEST(Lldm, DeriveStreamSeparatesIndexAndPurpose) {
  EXPECT_EQ(derive_stream(1, 2, 3)(), derive_stream(1, 2, 3)());
  EXPECT_NE(derive_stream(1, 2, 3)(), derive_stream(1, 3, 3)());
  EXPECT_NE(derive_stream(1, 2, 3)(), derive_stream(1, 2, 4)());
  EXPECT_NE(derive_stream(1, 2, 3)(), derive_stream(2, 2, 3)());
}

TEST(Lldm, DeadPixelsConcentrateInLateTimestamps) {
  std::mt19937_64 rng(3);
  const FpeMap m = random_fpe(100, 100, rng);
  Rng r(11);
  const FpeMap out = degrade_temporal(m, only_dead_pixels(), r);
  std::vector<double> sorted = m.values();
  std::sort(sorted.begin(), sorted.end());
  const double q1 = sorted[sorted.size() / 4];
  const double q3 = sorted[3 * sorted.size() / 4];
  double dead_lo = 0, dead_hi = 0, n_lo = 0, n_hi = 0;
  for (std::size_t i = 0; i < m.size(); ++i) {
    if (m[i] <= q1) {
      ++n_lo;
      dead_lo += out.missing(i);
    } else if (m[i] >= q3) {
      ++n_hi;
      dead_hi += out.missing(i);
    }
  }
  EXPECT_GT(dead_hi / n_hi, dead_lo / n_lo);
}

TEST(Lldm, LatencyNeverDecreasesTimestamps) {
  DegradationConfig c = DegradationConfig::identity();
  c.latency_alpha = {0.0, 0.5};
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    const FpeMap m = random_fpe(8, 8, rng);
    Rng r(trial);
    const FpeMap out = degrade_temporal(m, c, r);
    for (std::size_t i = 0; i < m.size(); ++i) EXPECT_GE(out[i], m[i]);
    EXPECT_GE(out.max_valid(), m.max_valid());
  }
}

TEST(Lldm, SpatialOutputStaysInRange) {
  std::mt19937_64 rng(5);
  DegradationConfig c;
  c.gauss_sigma = {0.2, 0.2};
  Rng r(6);
  const LinearRaster out = degrade_spatial(gamma_decode(random_encoded(12, 9, rng)), c, r);
  for (double v : out.data()) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
}

TEST(Lldm, DownUpPreservesConstantPlanes) {
  std::vector<double> plane(7 * 5, 0.37);
  detail::down_up_plane(plane.data(), 7, 5, 2);
  for (double v : plane) EXPECT_NEAR(v, 0.37, 1e-15);
  std::vector<double> p2(6 * 6, 0.5);
  detail::blur_plane(p2.data(), 6, 6, 1.2);
  for (double v : p2) EXPECT_NEAR(v, 0.5, 1e-15);
}

TEST(Lldm, ValidateNamesField) {
  DegradationConfig c;
  c.blur_sigma = {1.0, 0.5};
  try {
    c.validate();
    FAIL() << "expected ValidationError";
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("lldm.blur_sigma"), std::string::npos);
  }
  c = DegradationConfig{};
  c.dead_pixel_max_prob = 1.5;
  EXPECT_THROW(c.validate(), ValidationError);
}

TEST(Lldm, ThresholdSamplingIsPositiveWithRequestedMoments) {
  Rng r(8);
  const ThresholdField f = sample_thresholds(100, 100, kTestThresholdMu, kTestThresholdSigma, r);
  double s = 0, s2 = 0;
  for (double v : f.values()) {
    ASSERT_GT(v, 0.0);
    s += v;
    s2 += v * v;
  }
  const double n = 1e4;
  const double mean = s / n;
  EXPECT_NEAR(mean, 0.2, 0.003);
  EXPECT_NEAR(std::sqrt(s2 / n - mean * mean), 0.05, 0.003);
}

TEST(Lldm, LowLightSynthesisDarkens) {
  std::mt19937_64 rng(9);
  const LinearRaster gt = gamma_decode(random_encoded(16, 16, rng));
  Rng r(10);
  DegradationConfig noiseless = DegradationConfig::identity();
  const LinearRaster low = synthesize_low_light(gt, {0.1, 0.1}, noiseless, r);
  for (std::size_t i = 0; i < gt.data().size(); ++i) EXPECT_NEAR(low.data()[i], 0.1 * gt.data()[i], 1e-15);
}

}  // namespace
}  // namespace retinev
