// Copyright (C) 2026 The hkp Authors
// SPDX-License-Identifier: Apache-2.0
//

#include <gtest/gtest.h>

#include <cmath>

#include "hkp/ops.hpp"
#include "test_util.hpp"

namespace hkp {
namespace {

using test::Rng;

TEST(Conv2d, SingleMultiplyAdd) {
  Tensor x({1, 1, 1, 1}, 2.0f);
  auto p = ConvParams::zeros(1, 1, 1, 1);
  p.weights[0] = 3.0f;
  p.bias[0] = 0.5f;
  EXPECT_FLOAT_EQ(conv2d(x, p).at(0, 0, 0, 0), 6.5f);
}

TEST(Conv2d, ZeroKernelGivesBias) {
  Rng rng(1);
  const Tensor x = rng.tensor({2, 5, 6, 3});
  auto p = ConvParams::zeros(3, 3, 3, 4, 2);
  p.bias = {0.25f, -1.0f, 2.0f, 0.0f};
  const Tensor y = conv2d(x, p);
  for (int n = 0; n < y.batch(); ++n)
    for (int i = 0; i < y.height(); ++i)
      for (int j = 0; j < y.width(); ++j)
        for (int c = 0; c < 4; ++c) EXPECT_EQ(y.at(n, i, j, c), p.bias[c]);
}

TEST(Conv2d, OnesKernelCountsOverlap) {
  Tensor x({1, 3, 3, 1}, 1.0f);
  auto p = ConvParams::zeros(3, 3, 1, 1);
  std::fill(p.weights.begin(), p.weights.end(), 1.0f);
  const Tensor y = conv2d(x, p);
  EXPECT_FLOAT_EQ(y.at(0, 1, 1, 0), 9.0f);
  EXPECT_FLOAT_EQ(y.at(0, 0, 0, 0), 4.0f);
  EXPECT_FLOAT_EQ(y.at(0, 2, 2, 0), 4.0f);
  EXPECT_FLOAT_EQ(y.at(0, 0, 1, 0), 6.0f);
}

TEST(Conv2d, OutputSizeRules) {
  Tensor x({1, 7, 9, 2});
  EXPECT_EQ(conv2d(x, ConvParams::zeros(3, 3, 2, 1, 2)).shape(), (Shape{1, 4, 5, 1}));
  EXPECT_EQ(conv2d(x, ConvParams::zeros(3, 3, 2, 1, 2, Padding::valid)).shape(),
            (Shape{1, 3, 4, 1}));
  EXPECT_EQ(conv2d(x, ConvParams::zeros(1, 1, 2, 1, 1)).shape(), (Shape{1, 7, 9, 1}));
}

TEST(Conv2d, SamePaddingPutsOddUnitBottomRight) {
  // 4 wide, k=3, s=2: out 2, total pad 1 -> 0 before, 1 after.
  Tensor x({1, 1, 4, 1});
  for (int i = 0; i < 4; ++i) x.at(0, 0, i, 0) = static_cast<float>(i + 1);
  auto p = ConvParams::zeros(1, 3, 1, 1, 2);
  p.weights = {1.0f, 10.0f, 100.0f};
  const Tensor y = conv2d(x, p);
  EXPECT_FLOAT_EQ(y.at(0, 0, 0, 0), 1 + 20 + 300);
  EXPECT_FLOAT_EQ(y.at(0, 0, 1, 0), 3 + 40);
}

TEST(Conv2d, IdentityKernelIsIdentity) {
  Rng rng(2);
  const Tensor x = rng.tensor({1, 5, 5, 4});
  auto p = ConvParams::zeros(1, 1, 4, 4);
  for (int c = 0; c < 4; ++c) p.w(0, 0, c, c) = 1.0f;
  EXPECT_EQ(conv2d(x, p).vec(), x.vec());
}

TEST(Conv2d, MatchesNaiveReference) {
  Rng rng(3);
  for (int trial = 0; trial < 30; ++trial) {
    const int k = rng.integer(1, 4);
    const int s = rng.integer(1, 2);
    const auto pad = rng.integer(0, 1) ? Padding::same : Padding::valid;
    const int h = rng.integer(k, 9);
    const int w = rng.integer(k, 9);
    // Widths >= 4 exercise the tiled pointwise path.
    const Tensor x = rng.tensor({rng.integer(1, 2), h, w, rng.integer(1, 5)});
    const auto p = rng.conv(k, x.channels(), rng.integer(1, 6), s, pad);
    int oh = 0, ow = 0;
    const auto ref = test::naive_conv(x, p, oh, ow);
    const Tensor y = conv2d(x, p);
    ASSERT_EQ(y.height(), oh);
    ASSERT_EQ(y.width(), ow);
    for (std::size_t i = 0; i < ref.size(); ++i)
      ASSERT_NEAR(y.data()[i], ref[i], 1e-5) << "trial " << trial;
  }
}

TEST(Conv2d, ChannelMismatchIsConfigError) {
  EXPECT_THROW(conv2d(Tensor({1, 3, 3, 2}), ConvParams::zeros(3, 3, 3, 1)),
               ConfigError);
}

TEST(Depthwise, PerChannelScaling) {
  Tensor x({1, 1, 1, 2});
  x.at(0, 0, 0, 0) = 1.0f;
  x.at(0, 0, 0, 1) = 2.0f;
  auto p = DepthwiseParams::zeros(1, 1, 2);
  p.weights = {3.0f, 5.0f};
  const Tensor y = depthwise_conv2d(x, p);
  EXPECT_FLOAT_EQ(y.at(0, 0, 0, 0), 3.0f);
  EXPECT_FLOAT_EQ(y.at(0, 0, 0, 1), 10.0f);
}

TEST(Depthwise, CenterKernelIsIdentity) {
  Rng rng(4);
  const Tensor x = rng.tensor({1, 6, 5, 3});
  auto p = DepthwiseParams::zeros(3, 3, 3);
  for (int c = 0; c < 3; ++c) p.w(1, 1, c) = 1.0f;
  EXPECT_EQ(depthwise_conv2d(x, p).vec(), x.vec());
}

TEST(Depthwise, StrideTwoSamplesEvenPositions) {
  Tensor x({1, 4, 4, 1});
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) x.at(0, i, j, 0) = static_cast<float>(10 * i + j);
  auto p = DepthwiseParams::zeros(1, 1, 1, 2);
  p.weights = {1.0f};
  const Tensor y = depthwise_conv2d(x, p);
  ASSERT_EQ(y.shape(), (Shape{1, 2, 2, 1}));
  EXPECT_EQ(y.at(0, 0, 0, 0), 0.0f);
  EXPECT_EQ(y.at(0, 0, 1, 0), 2.0f);
  EXPECT_EQ(y.at(0, 1, 0, 0), 20.0f);
  EXPECT_EQ(y.at(0, 1, 1, 0), 22.0f);
}

TEST(Depthwise, ChannelsAreIndependent) {
  Rng rng(5);
  const auto p = rng.depthwise(3, 4, 1, Padding::same);
  Tensor x = rng.tensor({1, 6, 6, 4});
  const Tensor before = depthwise_conv2d(x, p);
  for (int i = 0; i < 6; ++i)
    for (int j = 0; j < 6; ++j) x.at(0, i, j, 2) += rng.uniformf(-3, 3);
  const Tensor after = depthwise_conv2d(x, p);
  for (int i = 0; i < 6; ++i)
    for (int j = 0; j < 6; ++j)
      for (int c : {0, 1, 3}) EXPECT_EQ(before.at(0, i, j, c), after.at(0, i, j, c));
}

TEST(Depthwise, MatchesNaiveDiagonalConv) {
  Rng rng(6);
  for (int trial = 0; trial < 20; ++trial) {
    const int c = rng.integer(1, 5);
    const int s = rng.integer(1, 2);
    const auto dw = rng.depthwise(3, c, s, Padding::same);
    auto dense = ConvParams::zeros(3, 3, c, c, s);
    for (int ky = 0; ky < 3; ++ky)
      for (int kx = 0; kx < 3; ++kx)
        for (int ch = 0; ch < c; ++ch) dense.w(ky, kx, ch, ch) = dw.w(ky, kx, ch);
    dense.bias = dw.bias;
    const Tensor x = rng.tensor({1, rng.integer(3, 8), rng.integer(3, 8), c});
    int oh = 0, ow = 0;
    const auto ref = test::naive_conv(x, dense, oh, ow);
    const Tensor y = depthwise_conv2d(x, dw);
    for (std::size_t i = 0; i < ref.size(); ++i) ASSERT_NEAR(y.data()[i], ref[i], 1e-5);
  }
}

TEST(Depthwise, ChannelMismatchIsConfigError) {
  EXPECT_THROW(depthwise_conv2d(Tensor({1, 3, 3, 2}), DepthwiseParams::zeros(3, 3, 3)),
               ConfigError);
}

TEST(TransposedConv, SingleSiteScatter) {
  Tensor x({1, 1, 1, 1}, 1.5f);
  auto p = ConvParams::zeros(2, 2, 1, 1, 2);
  p.weights = {1.0f, 2.0f, 3.0f, 4.0f};
  const Tensor y = transposed_conv2d(x, p);
  ASSERT_EQ(y.shape(), (Shape{1, 2, 2, 1}));
  EXPECT_FLOAT_EQ(y.at(0, 0, 0, 0), 1.5f);
  EXPECT_FLOAT_EQ(y.at(0, 0, 1, 0), 3.0f);
  EXPECT_FLOAT_EQ(y.at(0, 1, 0, 0), 4.5f);
  EXPECT_FLOAT_EQ(y.at(0, 1, 1, 0), 6.0f);
}

TEST(TransposedConv, ZeroInputGivesBias) {
  Rng rng(7);
  auto p = rng.conv(4, 3, 2, 2, Padding::same);
  const Tensor y = transposed_conv2d(Tensor({1, 3, 3, 3}), p);
  ASSERT_EQ(y.shape(), (Shape{1, 6, 6, 2}));
  for (int i = 0; i < 6; ++i)
    for (int j = 0; j < 6; ++j)
      for (int c = 0; c < 2; ++c) EXPECT_EQ(y.at(0, i, j, c), p.bias[c]);
}

TEST(TransposedConv, OutputIsInputTimesStride) {
  for (int s : {1, 2, 3}) {
    const auto p = ConvParams::zeros(2 * s, 2 * s, 2, 2, s);
    EXPECT_EQ(transposed_conv2d(Tensor({1, 5, 7, 2}), p).shape(),
              (Shape{1, 5 * s, 7 * s, 2}));
  }
}

// Swaps the channel axes so a transposed conv uses the same kernel values
// as the forward conv it is the adjoint of.
ConvParams swap_channels(const ConvParams& p) {
  auto q = ConvParams::zeros(p.kh, p.kw, p.c_out, p.c_in, p.stride, p.padding);
  for (int ky = 0; ky < p.kh; ++ky)
    for (int kx = 0; kx < p.kw; ++kx)
      for (int ci = 0; ci < p.c_in; ++ci)
        for (int co = 0; co < p.c_out; ++co) q.w(ky, kx, co, ci) = p.w(ky, kx, ci, co);
  return q;
}

TEST(TransposedConv, AdjointOfConv) {
  Rng rng(8);
  for (int trial = 0; trial < 50; ++trial) {
    const int s = rng.integer(1, 2);
    const auto pad = trial % 3 == 0 ? Padding::valid : Padding::same;
    auto fwd = rng.conv(2 * s, rng.integer(1, 3), rng.integer(1, 3), s, pad);
    std::fill(fwd.bias.begin(), fwd.bias.end(), 0.0f);
    const Tensor x = rng.tensor({1, 4, 4, fwd.c_in});
    const Tensor cx = conv2d(x, fwd);
    const Tensor y = rng.tensor(cx.shape());
    const Tensor ty = transposed_conv2d(y, swap_channels(fwd));
    ASSERT_EQ(ty.shape(), x.shape());
    EXPECT_NEAR(test::dot(cx, y), test::dot(x, ty), 1e-5) << "trial " << trial;
  }
}

TEST(Relu6, Clamps) {
  Tensor x({1, 1, 1, 3});
  x.data()[0] = -1.0f;
  x.data()[1] = 3.5f;
  x.data()[2] = 7.2f;
  const Tensor y = relu6(x);
  EXPECT_EQ(y.data()[0], 0.0f);
  EXPECT_EQ(y.data()[1], 3.5f);
  EXPECT_EQ(y.data()[2], 6.0f);
}

TEST(FoldBatchnorm, IdentityNormalizationKeepsParams) {
  Rng rng(9);
  const auto conv = rng.conv(3, 2, 3, 1, Padding::same);
  auto bn = BatchNormParams::identity(3, 0.0f);
  const auto folded = fold_batchnorm(conv, bn);
  EXPECT_EQ(folded.weights, conv.weights);
  EXPECT_EQ(folded.bias, conv.bias);
}

TEST(FoldBatchnorm, DirectSubstitution) {
  auto conv = ConvParams::zeros(1, 1, 1, 1);
  conv.weights = {1.0f};
  conv.bias = {0.0f};
  BatchNormParams bn{{2.0f}, {1.0f}, {2.0f}, {4.0f}, 0.0f};
  const auto f = fold_batchnorm(conv, bn);
  EXPECT_FLOAT_EQ(f.weights[0], 1.0f);
  EXPECT_FLOAT_EQ(f.bias[0], -1.0f);
}

TEST(FoldBatchnorm, MatchesUnfoldedPipeline) {
  Rng rng(10);
  for (int trial = 0; trial < 100; ++trial) {
    const auto conv = rng.conv(3, 2, 4, 1, Padding::same);
    const auto bn = rng.batchnorm(4);
    const Tensor x = rng.tensor({1, 3, 3, 2});
    const Tensor ref = batch_norm(conv2d(x, conv), bn);
    const Tensor got = conv2d(x, fold_batchnorm(conv, bn));
    for (std::size_t i = 0; i < ref.size(); ++i)
      ASSERT_NEAR(got.data()[i], ref.data()[i], 1e-6);

    const auto dw = rng.depthwise(3, 4, 1, Padding::same);
    const Tensor x4 = rng.tensor({1, 3, 3, 4});
    const Tensor dref = batch_norm(depthwise_conv2d(x4, dw), bn);
    const Tensor dgot = depthwise_conv2d(x4, fold_batchnorm(dw, bn));
    for (std::size_t i = 0; i < dref.size(); ++i)
      ASSERT_NEAR(dgot.data()[i], dref.data()[i], 1e-6);
  }
}

TEST(FoldBatchnorm, ChannelMismatchIsConfigError) {
  EXPECT_THROW(fold_batchnorm(ConvParams::zeros(1, 1, 1, 2), BatchNormParams::identity(3)),
               ConfigError);
}

TEST(SpatialSoftmax, UniformScores) {
  const auto p = spatial_softmax(ScorePlane(2, 2, 0.7f));
  for (double v : p.values) EXPECT_DOUBLE_EQ(v, 0.25);
}

TEST(SpatialSoftmax, TwoCellClosedForm) {
  ScorePlane s(1, 2);
  s.values = {0.0f, static_cast<float>(std::log(3.0))};
  const auto p = spatial_softmax(s);
  EXPECT_NEAR(p.values[0], 0.25, 1e-7);
  EXPECT_NEAR(p.values[1], 0.75, 1e-7);
}

TEST(SpatialSoftmax, SumsToOneAndShiftInvariant) {
  Rng rng(11);
  for (int trial = 0; trial < 200; ++trial) {
    ScorePlane s(rng.integer(1, 30), rng.integer(1, 30));
    // Scores on a 1/1024 lattice so adding an integer shift is exact.
    for (float& v : s.values)
      v = std::round(rng.uniformf(-20, 20) * 1024.0f) / 1024.0f;
    ScorePlane shifted = s;
    const float c = static_cast<float>(rng.integer(-5, 5));
    for (float& v : shifted.values) v += c;
    const auto p = spatial_softmax(s);
    const auto q = spatial_softmax(shifted);
    double sum = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
      sum += p.values[i];
      ASSERT_GT(p.values[i], 0.0);
      ASSERT_NEAR(p.values[i], q.values[i], 1e-7);
    }
    EXPECT_NEAR(sum, 1.0, 1e-6);
  }
}

TEST(SpatialSoftmax, LargeScoresDoNotOverflow) {
  ScorePlane s(1, 3);
  s.values = {1000.0f, 999.0f, -1000.0f};
  const auto p = spatial_softmax(s);
  EXPECT_TRUE(std::isfinite(p.values[0]));
  EXPECT_GT(p.values[0], p.values[1]);
}

TEST(Determinism, ThreadedKernelsMatchSingleThreadBitwise) {
  Rng rng(12);
  const Tensor x = rng.tensor({1, 17, 13, 8});
  const auto conv = rng.conv(3, 8, 16, 2, Padding::same);
  const auto pw = rng.conv(1, 8, 12, 1, Padding::same);
  const auto dw = rng.depthwise(3, 8, 1, Padding::same);
  const auto up = rng.conv(4, 8, 6, 2, Padding::same);
  for (int threads : {2, 3, 8}) {
    const ExecContext ctx{threads};
    EXPECT_EQ(conv2d(x, conv).vec(), conv2d(x, conv, ctx).vec());
    EXPECT_EQ(conv2d(x, pw).vec(), conv2d(x, pw, ctx).vec());
    EXPECT_EQ(depthwise_conv2d(x, dw).vec(), depthwise_conv2d(x, dw, ctx).vec());
    EXPECT_EQ(transposed_conv2d(x, up).vec(), transposed_conv2d(x, up, ctx).vec());
  }
}

TEST(Tensor, RejectsInvalidShapes) {
  EXPECT_THROW(Tensor({1, 0, 3, 3}), ConfigError);
  EXPECT_THROW(Tensor({1, 2, 2, 1}, std::vector<float>(3)), ConfigError);
}

}  // namespace
}  // namespace hkp
