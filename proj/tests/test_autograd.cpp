// Copyright 2026 The retinev Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "retinev/nn.hpp"
#include "retinev/ops.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

namespace retinev {
namespace {

using ag::Var;
using testing::gradient_check;
using testing::random_tensor;

constexpr double kGradTol = 1e-6;

/// Scalar probe <op(x), W> / numel with a fixed random W, so every output
/// element contributes a distinct weight to the gradient.
std::function<Var<double>(const Var<double>&)> probe(std::function<Var<double>(const Var<double>&)> op, Shape out,
                                                     std::uint64_t seed = 77) {
  std::mt19937_64 rng(seed);
  auto w = std::make_shared<Var<double>>(random_tensor(out, rng));
  return [op, w](const Var<double>& x) { return ag::mean(ag::mul(op(x), *w)); };
}

class OpGradients : public ::testing::Test {
 protected:
  std::mt19937_64 rng{2024};
};

TEST_F(OpGradients, Conv2dInputWeightBias) {
  const Shape xs{2, 3, 5, 4};
  const Var<double> w(random_tensor({4, 3, 3, 3}, rng), true);
  const Var<double> b(random_tensor({1, 4, 1, 1}, rng), true);
  EXPECT_LT(gradient_check(probe([&](const Var<double>& x) { return ag::conv2d(x, w, b); }, {2, 4, 5, 4}),
                           random_tensor(xs, rng)),
            kGradTol);
  const Tensor<double> x = random_tensor(xs, rng);
  EXPECT_LT(gradient_check(
                probe([&](const Var<double>& wv) { return ag::conv2d(Var<double>(x), wv, b); }, {2, 4, 5, 4}),
                w.value()),
            kGradTol);
  EXPECT_LT(gradient_check(
                probe([&](const Var<double>& bv) { return ag::conv2d(Var<double>(x), w, bv); }, {2, 4, 5, 4}),
                b.value()),
            kGradTol);
}

TEST_F(OpGradients, PoolUpsampleConcatSlice) {
  EXPECT_LT(gradient_check(probe([](const Var<double>& x) { return ag::avg_pool2(x); }, {1, 2, 2, 3}),
                           random_tensor({1, 2, 5, 6}, rng)),
            kGradTol);
  EXPECT_LT(gradient_check(probe([](const Var<double>& x) { return ag::upsample2(x, 5, 6); }, {1, 2, 5, 6}),
                           random_tensor({1, 2, 3, 3}, rng)),
            kGradTol);
  const Var<double> other(random_tensor({2, 1, 3, 3}, rng));
  EXPECT_LT(gradient_check(probe([&](const Var<double>& x) { return ag::concat_channels(other, x); }, {2, 3, 3, 3}),
                           random_tensor({2, 2, 3, 3}, rng)),
            kGradTol);
  EXPECT_LT(gradient_check(probe([](const Var<double>& x) { return ag::slice_channels(x, 1, 2); }, {2, 2, 3, 3}),
                           random_tensor({2, 4, 3, 3}, rng)),
            kGradTol);
  const Var<double> batch(random_tensor({1, 2, 3, 3}, rng));
  EXPECT_LT(gradient_check(probe([&](const Var<double>& x) { return ag::concat_batch(x, batch); }, {3, 2, 3, 3}),
                           random_tensor({2, 2, 3, 3}, rng)),
            kGradTol);
  EXPECT_LT(gradient_check(probe([](const Var<double>& x) { return ag::slice_batch(x, 1, 1); }, {1, 2, 3, 3}),
                           random_tensor({3, 2, 3, 3}, rng)),
            kGradTol);
}

TEST_F(OpGradients, ElementwiseBinary) {
  const Shape s{2, 3, 2, 2};
  const Var<double> other(random_tensor(s, rng));
  const Var<double> single(random_tensor({2, 1, 2, 2}, rng));
  EXPECT_LT(gradient_check(probe([&](const Var<double>& x) { return ag::add(x, other); }, s), random_tensor(s, rng)),
            kGradTol);
  EXPECT_LT(gradient_check(probe([&](const Var<double>& x) { return ag::sub(other, x); }, s), random_tensor(s, rng)),
            kGradTol);
  EXPECT_LT(gradient_check(probe([&](const Var<double>& x) { return ag::mul(x, x); }, s), random_tensor(s, rng)),
            kGradTol);
  // Broadcast side: the single-channel operand gathers from every channel.
  const Var<double> full(random_tensor(s, rng));
  EXPECT_LT(gradient_check(probe([&](const Var<double>& x) { return ag::mul(full, x); }, s),
                           random_tensor({2, 1, 2, 2}, rng)),
            kGradTol);
  EXPECT_LT(gradient_check(probe([&](const Var<double>& x) { return ag::mul(x, single); }, s), random_tensor(s, rng)),
            kGradTol);
  EXPECT_LT(gradient_check(probe([](const Var<double>& x) { return ag::scale(x, -2.5); }, s), random_tensor(s, rng)),
            kGradTol);
}

TEST_F(OpGradients, Pointwise) {
  const Shape s{1, 2, 3, 3};
  for (auto op : std::vector<std::function<Var<double>(const Var<double>&)>>{
           [](const Var<double>& x) { return ag::relu(x); },
           [](const Var<double>& x) { return ag::leaky_relu(x, 0.2); },
           [](const Var<double>& x) { return ag::gelu(x); },
           [](const Var<double>& x) { return ag::sigmoid(x); },
           [](const Var<double>& x) { return ag::clamp(x, -0.5, 0.5); },
           [](const Var<double>& x) { return ag::soft_clamp(x, 0.0, 1.0, 20.0); },
       }) {
    EXPECT_LT(gradient_check(probe(op, s), random_tensor(s, rng, -2.0, 2.0)), kGradTol);
  }
  EXPECT_LT(gradient_check(probe([](const Var<double>& x) { return ag::power(x, 1.0 / 2.2); }, s),
                           random_tensor(s, rng, 0.1, 1.0)),
            kGradTol);
}

TEST_F(OpGradients, LayerNormInputAndAffine) {
  const Shape s{2, 5, 3, 2};
  const Var<double> g(random_tensor({1, 5, 1, 1}, rng), true);
  const Var<double> b(random_tensor({1, 5, 1, 1}, rng), true);
  const Tensor<double> x = random_tensor(s, rng);
  EXPECT_LT(gradient_check(probe([&](const Var<double>& v) { return ag::layer_norm_channels(v, g, b); }, s), x),
            kGradTol);
  EXPECT_LT(gradient_check(
                probe([&](const Var<double>& gv) { return ag::layer_norm_channels(Var<double>(x), gv, b); }, s),
                g.value()),
            kGradTol);
  EXPECT_LT(gradient_check(
                probe([&](const Var<double>& bv) { return ag::layer_norm_channels(Var<double>(x), g, bv); }, s),
                b.value()),
            kGradTol);
}

TEST_F(OpGradients, ChannelAttentionAllInputs) {
  const Shape s{2, 6, 2, 3};
  const Var<double> q(random_tensor(s, rng), true);
  const Var<double> k(random_tensor(s, rng), true);
  const Var<double> v(random_tensor(s, rng), true);
  EXPECT_LT(gradient_check(probe([&](const Var<double>& x) { return ag::channel_attention(x, k, v, 2); }, s),
                           q.value()),
            kGradTol);
  EXPECT_LT(gradient_check(probe([&](const Var<double>& x) { return ag::channel_attention(q, x, v, 2); }, s),
                           k.value()),
            kGradTol);
  EXPECT_LT(gradient_check(probe([&](const Var<double>& x) { return ag::channel_attention(q, k, x, 2); }, s),
                           v.value()),
            kGradTol);
}

TEST_F(OpGradients, ReductionsAwayFromKinks) {
  const Shape s{1, 3, 2, 2};
  Tensor<double> target = random_tensor(s, rng);
  Tensor<double> x = target;
  for (auto& v : x.vec()) v += (rng() % 2 ? 0.3 : -0.3);
  const Var<double> t(target);
  EXPECT_LT(gradient_check([&](const Var<double>& a) { return ag::l1_mean(a, t); }, x), kGradTol);
  EXPECT_LT(gradient_check([](const Var<double>& a) { return ag::mean(a); }, x), kGradTol);
}

TEST(ChannelAttention, MatchesDenseReference) {
  std::mt19937_64 rng(31);
  for (const auto& [s, heads] : std::vector<std::pair<Shape, int>>{{{1, 4, 2, 2}, 1}, {{2, 8, 4, 4}, 2}, {{1, 8, 3, 5}, 4}}) {
    const Tensor<double> q = random_tensor(s, rng, -2, 2);
    const Tensor<double> k = random_tensor(s, rng, -2, 2);
    const Tensor<double> v = random_tensor(s, rng, -2, 2);
    const Tensor<double> got = ag::channel_attention(Var<double>(q), Var<double>(k), Var<double>(v), heads).value();
    const Tensor<double> want = oracle::dense_attention(q, k, v, heads);
    for (std::size_t i = 0; i < got.size(); ++i) EXPECT_NEAR(got[i], want[i], 1e-12);
    const auto maps = ag::channel_attention_maps(q, k, 0, heads);
    ASSERT_EQ(static_cast<int>(maps.size()), heads);
    for (const auto& m : maps) {
      EXPECT_EQ(m.h(), s.c / heads);
      EXPECT_EQ(m.w(), s.c / heads);
    }
  }
}

TEST(ChannelAttention, ColumnsSumToOne) {
  std::mt19937_64 rng(32);
  const Shape s{1, 6, 3, 3};
  const auto maps = ag::channel_attention_maps(random_tensor(s, rng), random_tensor(s, rng), 0, 3);
  for (const auto& m : maps)
    for (int j = 0; j < m.w(); ++j) {
      double sum = 0;
      for (int i = 0; i < m.h(); ++i) sum += m.at(0, 0, i, j);
      EXPECT_NEAR(sum, 1.0, 1e-12);
    }
}

TEST(ChannelAttention, RejectsIndivisibleHeads) {
  const Var<double> x(Tensor<double>({1, 6, 2, 2}));
  EXPECT_THROW(ag::channel_attention(x, x, x, 4), ValidationError);
}

TEST(Autograd, NoGradGuardSkipsRecording) {
  const Var<double> p(Tensor<double>({1, 1, 1, 1}, 2.0), true);
  {
    ag::NoGradGuard guard;
    EXPECT_FALSE(ag::scale(p, 3.0).requires_grad());
  }
  EXPECT_TRUE(ag::scale(p, 3.0).requires_grad());
}

TEST(Autograd, SharedSubgraphAccumulates) {
  const Var<double> x(Tensor<double>({1, 1, 1, 1}, 3.0), true);
  const Var<double> y = ag::mul(x, x);
  ag::backward(ag::add(y, y));
  EXPECT_DOUBLE_EQ(x.grad()[0], 12.0);
}

TEST(Autograd, GeometricTransformIsInvertible) {
  std::mt19937_64 rng(33);
  const Tensor<double> x = random_tensor({1, 2, 3, 5}, rng);
  const Tensor<double> r1 = ag::geometric_transform(x, false, 1);
  EXPECT_EQ(r1.h(), 5);
  EXPECT_EQ(r1.w(), 3);
  EXPECT_EQ(ag::geometric_transform(r1, false, 3).vec(), x.vec());
  EXPECT_EQ(ag::geometric_transform(ag::geometric_transform(x, true, 0), true, 0).vec(), x.vec());
}

TEST(Nn, ConvInitAndZeroInit) {
  std::mt19937_64 rng(34);
  const nn::Conv2d<double> zero(4, 2, 3, rng, true);
  for (double v : zero.weight.value().vec()) EXPECT_EQ(v, 0.0);
  const nn::Conv2d<double> he(64, 64, 3, rng);
  double s2 = 0;
  for (double v : he.weight.value().vec()) s2 += v * v;
  EXPECT_NEAR(std::sqrt(s2 / he.weight.value().size()), std::sqrt(2.0 / (64 * 9)), 0.002);
}

}  // namespace
}  // namespace retinev
