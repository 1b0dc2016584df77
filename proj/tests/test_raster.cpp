// Copyright 2026 The retinev Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "retinev/image_io.hpp"
#include "retinev/metrics.hpp"
#include "retinev/raster.hpp"
#include "test_util.hpp"

namespace retinev {
namespace {

LinearRaster random_linear(int w, int h, int c, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> d(static_cast<std::size_t>(w) * h * c);
  for (auto& v : d) v = u(rng);
  return {w, h, c, std::move(d)};
}

TEST(Raster, RejectsOutOfRangeAndNonFinite) {
  EXPECT_THROW(LinearRaster(2, 1, 1, {0.5, 1.5}), ValidationError);
  EXPECT_THROW(LinearRaster(2, 1, 1, {0.5, -0.1}), ValidationError);
  EXPECT_THROW(LinearRaster(2, 1, 1, {0.5, std::nan("")}), ValidationError);
  EXPECT_THROW(LinearRaster(2, 2, 1, {0.5, 0.5}), ValidationError);
  EXPECT_THROW(EncodedRaster(1, 1, 1, {0.5}, 0.0), ValidationError);
}

TEST(Raster, GammaRoundTrip) {
  std::mt19937_64 rng(3);
  const LinearRaster r = random_linear(7, 5, 3, rng);
  const LinearRaster back = gamma_decode(gamma_encode(r, 2.2));
  for (std::size_t i = 0; i < r.data().size(); ++i) EXPECT_NEAR(back.data()[i], r.data()[i], 1e-12);
  EXPECT_DOUBLE_EQ(gamma_encode(r, 2.2).gamma(), 2.2);
}

TEST(Raster, LuminanceWeights) {
  const LinearRaster r(1, 1, 3, {1.0, 0.0, 0.0});
  EXPECT_DOUBLE_EQ(luminance(r).data()[0], kLumaR);
  const LinearRaster white(1, 1, 3, {1.0, 1.0, 1.0});
  EXPECT_NEAR(luminance(white).data()[0], 1.0, 1e-15);
}

TEST(Raster, CropSelectsWindow) {
  std::vector<double> d(4 * 3 * 3);
  for (std::size_t i = 0; i < d.size(); ++i) d[i] = static_cast<double>(i) / 36.0;
  const LinearRaster r(4, 3, 3, d);
  const LinearRaster c = crop(r, 1, 1, 2, 2);
  EXPECT_EQ(c.width(), 2);
  EXPECT_DOUBLE_EQ(c.at(1, 0, 0), r.at(1, 1, 1));
  EXPECT_DOUBLE_EQ(c.at(0, 1, 1), r.at(0, 2, 2));
  EXPECT_THROW(crop(r, 3, 0, 2, 1), ValidationError);
}

TEST(ImageIo, Png16RoundTripIsExactAtSixteenBits) {
  testing::TempDir dir("raster");
  std::mt19937_64 rng(5);
  const LinearRaster r = random_linear(9, 6, 3, rng);
  save_image(r, dir / "a.png", 16);
  const EncodedRaster back = load_image(dir / "a.png");
  ASSERT_EQ(back.width(), 9);
  ASSERT_EQ(back.channels(), 3);
  for (std::size_t i = 0; i < r.data().size(); ++i) EXPECT_NEAR(back.data()[i], r.data()[i], 0.5 / 65535 + 1e-12);
}

TEST(ImageIo, MissingFileThrowsIoError) {
  EXPECT_THROW(load_image("/nonexistent/x.png"), IoError);
}

TEST(Metrics, PsnrKnownValue) {
  // Constant error 0.25: MSE = 1/16, PSNR = 10 log10(16).
  const LinearRaster a(4, 4, 1, std::vector<double>(16, 0.5));
  const LinearRaster b(4, 4, 1, std::vector<double>(16, 0.75));
  EXPECT_NEAR(psnr(a, b), 12.041199826559248, 1e-12);
  EXPECT_DOUBLE_EQ(psnr(a, a), 100.0);
}

TEST(Metrics, SsimIdentityAndConstantClosedForm) {
  std::mt19937_64 rng(9);
  const LinearRaster a = random_linear(16, 13, 3, rng);
  EXPECT_NEAR(ssim(a, a), 1.0, 1e-12);
  // Two constant images x, y: variances vanish, SSIM = (2xy + c1) / (x^2 + y^2 + c1).
  const double x = 0.3;
  const double y = 0.6;
  const LinearRaster cx(12, 12, 1, std::vector<double>(144, x));
  const LinearRaster cy(12, 12, 1, std::vector<double>(144, y));
  const double c1 = 1e-4;
  EXPECT_NEAR(ssim(cx, cy), (2 * x * y + c1) / (x * x + y * y + c1), 1e-12);
}

TEST(Metrics, SsimNegativeForInvertedStructure) {
  std::mt19937_64 rng(11);
  const LinearRaster a = random_linear(20, 20, 1, rng);
  std::vector<double> inv(a.data());
  for (auto& v : inv) v = 1.0 - v;
  EXPECT_LT(ssim(a, LinearRaster(20, 20, 1, inv)), 0.0);
}

TEST(Metrics, SsimRejectsSmallImages) {
  const LinearRaster a(10, 10, 1, std::vector<double>(100, 0.5));
  EXPECT_THROW(ssim(a, a), ValidationError);
}

TEST(Metrics, SsimTapsAreNormalized) {
  double s = 0;
  for (double t : ssim_taps()) s += t;
  EXPECT_NEAR(s, 1.0, 1e-15);
}

}  // namespace
}  // namespace retinev
