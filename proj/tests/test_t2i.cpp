// Copyright 2026 The retinev Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "retinev/model.hpp"
#include "retinev/t2i.hpp"
#include "test_util.hpp"

namespace retinev {
namespace {

using ag::Var;
using testing::random_tensor;

TEST(Denoiser, FreshInstanceIsIdentity) {
  std::mt19937_64 rng(1);
  const Denoiser<double> d(4, rng);
  const Tensor<double> x = random_tensor({2, 1, 9, 7}, rng, 0, 1);
  EXPECT_EQ(d(Var<double>(x)).value().vec(), x.vec());
}

TEST(Denoiser, HandlesOddSizesAndRejectsTinyInputs) {
  std::mt19937_64 rng(2);
  const Denoiser<double> d(3, rng);
  nn::ParamList<double> params;
  d.collect(params, "d");
  testing::randomize(params, rng);
  const Var<double> out = d(Var<double>(random_tensor({1, 1, 13, 6}, rng)));
  EXPECT_EQ(out.shape(), (Shape{1, 1, 13, 6}));
  EXPECT_THROW(d(Var<double>(Tensor<double>({1, 1, 3, 8}))), ValidationError);
}

TEST(Denoiser, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(3);
  const Denoiser<double> d(2, rng);
  nn::ParamList<double> params;
  d.collect(params, "d");
  testing::randomize(params, rng);
  const Tensor<double> x = random_tensor({1, 1, 4, 4}, rng, 0, 1);
  const Tensor<double> target = random_tensor({1, 1, 4, 4}, rng, 0, 1);
  EXPECT_LT(testing::param_gradient_check(params, [&] { return ag::l1_mean(d(Var<double>(x)), Var<double>(target)); }),
            1e-4);
}

TEST(PixelMlp, FreshInstanceIsIdentityAndPointwise) {
  std::mt19937_64 rng(4);
  const PixelMlp<double> mlp(8, rng);
  const Tensor<double> x = random_tensor({1, 1, 3, 3}, rng);
  EXPECT_EQ(mlp(Var<double>(x)).value().vec(), x.vec());
  nn::ParamList<double> params;
  mlp.collect(params, "m");
  testing::randomize(params, rng);
  // Pointwise: equal inputs map to equal outputs wherever they appear.
  Tensor<double> same({1, 1, 2, 2}, 0.42);
  const auto out = mlp(Var<double>(same)).value();
  for (std::size_t i = 1; i < out.size(); ++i) EXPECT_EQ(out[i], out[0]);
}

TEST(TimeToIllumination, FreshModuleIsGammaEncodingWithFloor) {
  std::mt19937_64 rng(5);
  const TimeToIllumination<double> t2i(4, 4, 2.2, 0.01, rng);
  Tensor<double> e({1, 1, 4, 4});
  const double values[] = {1.0, 0.5, 0.1, 1e-3, 1e-6, 0.9, 0.25, 0.75, 1.0, 0.01, 0.3, 0.6, 0.2, 0.4, 0.8, 0.05};
  for (std::size_t i = 0; i < 16; ++i) e[i] = values[i];
  const auto out = t2i(Var<double>(e), ClampMode::kInference).value();
  const double lo = std::pow(0.01, 2.2);
  for (std::size_t i = 0; i < 16; ++i) {
    const double want = std::clamp(std::pow(std::clamp(values[i], lo, 1.0), 1 / 2.2), 0.01, 1.0);
    EXPECT_NEAR(out[i], want, 1e-12);
    EXPECT_GE(out[i], 0.01);
    EXPECT_LE(out[i], 1.0);
  }
}

TEST(TimeToIllumination, TrainingModeGradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(6);
  const TimeToIllumination<double> t2i(2, 3, 2.2, 0.01, rng);
  nn::ParamList<double> params;
  t2i.collect(params, "t2i");
  testing::randomize(params, rng, 0.2);
  const Tensor<double> e = random_tensor({1, 1, 4, 4}, rng, 0.05, 1.0);
  const Tensor<double> target = random_tensor({1, 1, 4, 4}, rng, 0.1, 1.0);
  EXPECT_LT(testing::param_gradient_check(params,
                                          [&] {
                                            return ag::l1_mean(t2i(Var<double>(e), ClampMode::kTraining),
                                                               Var<double>(target));
                                          }),
            1e-3);
}

TEST(IlluminationEstimate, ValidatesRange) {
  EXPECT_THROW(IlluminationEstimate(1, 1, {0.001}), ValidationError);
  EXPECT_THROW(IlluminationEstimate(1, 1, {1.5}), ValidationError);
  EXPECT_THROW(IlluminationEstimate(2, 1, {0.5}), ValidationError);
  EXPECT_NO_THROW(IlluminationEstimate(1, 1, {0.01}));
}

TEST(EstimateIllumination, LargerBetaBrightensFreshModel) {
  ModelConfig cfg;
  cfg.seed = 3;
  const RetinexModel<float> model(cfg);
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(1.0, 50.0);
  std::vector<double> t(64);
  for (auto& v : t) v = u(rng);
  const FpeMap m(8, 8, t);
  double prev = 0;
  for (double beta : {0.0, 1.0, 10.0, 100.0}) {
    const IlluminationEstimate est = estimate_illumination(m, beta, SensorConstants{}, model);
    double mean = 0;
    for (double v : est.values()) mean += v;
    mean /= 64;
    EXPECT_GT(mean, prev);
    prev = mean;
  }
}

}  // namespace
}  // namespace retinev
