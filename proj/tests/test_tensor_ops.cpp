#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "oracles.hpp"
#include "wtpose/layers.hpp"
#include "wtpose/ops.hpp"

using namespace wtpose;
using TD = Tensor<double>;

namespace {

TD iota(Shape s, double scale = 1.0) {
  TD t(std::move(s));
  for (std::size_t i = 0; i < t.numel(); ++i) t[i] = scale * static_cast<double>(i);
  return t;
}

}  // namespace

TEST(Tensor, ShapeAndValueCountMustAgree) {
  EXPECT_THROW(TD({2, 3}, std::vector<double>(5)), DimensionError);
  EXPECT_THROW(TD({1, 0, 2, 2}), DimensionError);
  TD t({2, 3});
  EXPECT_EQ(t.numel(), 6u);
  EXPECT_FALSE(t.has_grad());
  EXPECT_EQ(t.grad().size(), 6u);
  EXPECT_THROW(t.reshaped({4}), DimensionError);
}

TEST(Conv2d, IdentitySelectorIsExactIdentity) {
  Rng rng(1);
  const TD x = random_normal<double>({1, 3, 5, 5}, rng);
  TD w({3, 3, 1, 1});
  for (int o = 0; o < 3; ++o) w.at(o, o, 0, 0) = 1.0;
  EXPECT_EQ(ops::conv2d(x, w, TD({3}), 1, 0), x);
}

TEST(Conv2d, OnesCountOverlap) {
  const TD y = ops::conv2d(TD({1, 1, 3, 3}, 1.0), TD({1, 1, 3, 3}, 1.0), TD({1}), 1, 1);
  EXPECT_EQ(y.at(0, 0, 1, 1), 9.0);
  EXPECT_EQ(y.at(0, 0, 0, 0), 4.0);
  EXPECT_EQ(y.at(0, 0, 2, 2), 4.0);
  EXPECT_EQ(y.at(0, 0, 0, 1), 6.0);
}

TEST(Conv2d, MatchesNestedLoops) {
  Rng rng(7);
  const TD x = random_normal<double>({2, 4, 6, 6}, rng);
  const TD w = random_normal<double>({5, 4, 3, 3}, rng);
  const TD b = random_normal<double>({5}, rng);
  for (int stride : {1, 2}) {
    for (int pad : {0, 1}) {
      EXPECT_LT(oracle::max_abs_diff(ops::conv2d(x, w, b, stride, pad), oracle::conv2d(x, w, b, stride, pad)), 1e-12)
          << "stride " << stride << " pad " << pad;
    }
  }
  // wide enough for the tiled path
  const TD x2 = random_normal<double>({1, 9, 13, 11}, rng);
  const TD w2 = random_normal<double>({7, 9, 1, 1}, rng);
  const TD b2 = random_normal<double>({7}, rng);
  EXPECT_LT(oracle::max_abs_diff(ops::conv2d(x2, w2, b2, 1, 0), oracle::conv2d(x2, w2, b2, 1, 0)), 1e-12);
}

TEST(Conv2d, Errors) {
  const TD x({1, 2, 5, 5});
  EXPECT_THROW(ops::conv2d(x, TD({1, 3, 3, 3}), TD({1}), 1, 1), DimensionError);
  EXPECT_THROW(ops::conv2d(x, TD({1, 2, 2, 2}), TD({1}), 1, 1), ConfigError);
  EXPECT_THROW(ops::conv2d(x, TD({1, 2, 7, 7}), TD({1}), 1, 0), ConfigError);
  EXPECT_THROW(ops::conv2d(x, TD({1, 2, 3, 3}), TD({2}), 1, 1), DimensionError);
  EXPECT_EQ(ops::conv_out_extent(96, 3, 2, 1), 48);
}

TEST(Bilinear, ConstantsSurvive) {
  const TD y = ops::bilinear_upsample(TD({1, 2, 4, 4}, 3.5), 8, 8);
  for (double v : y.values()) EXPECT_EQ(v, 3.5);
}

TEST(Bilinear, SameSizeIsIdentity) {
  Rng rng(2);
  const TD x = random_normal<double>({2, 3, 5, 4}, rng);
  EXPECT_EQ(ops::bilinear_upsample(x, 5, 4), x);
}

TEST(Bilinear, TwoByTwoMatchesScalarFormula) {
  const TD x({1, 1, 2, 2}, {0, 1, 2, 3});
  const TD y = ops::bilinear_upsample(x, 4, 4);
  EXPECT_LT(oracle::max_abs_diff(y, oracle::bilinear(x, 4, 4)), 1e-12);
  // s = (d + 0.5) / 2 - 0.5: rows/cols {0, 0.25, 0.75, 1}
  EXPECT_NEAR(y.at(0, 0, 1, 1), 0.75, 1e-12);
  EXPECT_NEAR(y.at(0, 0, 0, 3), 1.0, 1e-12);
  EXPECT_NEAR(y.at(0, 0, 2, 1), 1.75, 1e-12);
}

TEST(Bilinear, RandomAgainstOracleAndDownsampleRejected) {
  Rng rng(4);
  const TD x = random_normal<double>({1, 3, 3, 5}, rng);
  EXPECT_LT(oracle::max_abs_diff(ops::bilinear_upsample(x, 12, 20), oracle::bilinear(x, 12, 20)), 1e-12);
  EXPECT_LT(oracle::max_abs_diff(ops::bilinear_upsample(x, 7, 11), oracle::bilinear(x, 7, 11)), 1e-12);
  EXPECT_THROW(ops::bilinear_upsample(x, 2, 5), ConfigError);
}

TEST(LayerNorm, ZeroVarianceGivesBeta) {
  const TD x({1, 4, 1, 1}, 2.5);
  const TD beta({4}, {0.1, 0.2, 0.3, 0.4});
  const TD y = ops::layer_norm(x, TD({4}, 1.0), beta);
  for (int c = 0; c < 4; ++c) EXPECT_DOUBLE_EQ(y[c], beta[c]);
}

TEST(LayerNorm, TwoPointCase) {
  const TD y = ops::layer_norm(TD({1, 2, 1, 1}, {1, 3}), TD({2}, 1.0), TD({2}));
  EXPECT_NEAR(y[0], -1.0, 1e-5);
  EXPECT_NEAR(y[1], 1.0, 1e-5);
}

TEST(LayerNorm, RandomStatistics) {
  Rng rng(5);
  const TD x = random_normal<double>({1, 8, 4, 4}, rng, 3.0);
  const TD y = ops::layer_norm(x, TD({8}, 1.0), TD({8}));
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) {
      double m = 0, v = 0;
      for (int c = 0; c < 8; ++c) m += y.at(0, c, i, j);
      m /= 8;
      for (int c = 0; c < 8; ++c) v += (y.at(0, c, i, j) - m) * (y.at(0, c, i, j) - m);
      v /= 8;
      EXPECT_LT(std::abs(m), 1e-10);
      EXPECT_NEAR(v, 1.0, 1e-5);  // eps shrinks it slightly
    }
  const TD g = random_normal<double>({8}, rng), b = random_normal<double>({8}, rng);
  EXPECT_LT(oracle::max_abs_diff(ops::layer_norm(x, g, b), oracle::layer_norm(x, g, b)), 1e-12);
  EXPECT_THROW(ops::layer_norm(x, TD({7}), TD({8})), DimensionError);
}

TEST(Softmax, UniformAndStable) {
  const TD u = ops::softmax_lastdim(TD({3}));
  for (double v : u.values()) EXPECT_DOUBLE_EQ(v, 1.0 / 3.0);
  const TD s = ops::softmax_lastdim(TD({2}, {5.0, 1005.0}));
  EXPECT_TRUE(s.all_finite());
  EXPECT_LT(s[0], 1e-300);
  EXPECT_DOUBLE_EQ(s[1], 1.0);
}

TEST(Softmax, SumsToOneAndShiftInvariant) {
  Rng rng(6);
  const TD x = random_normal<double>({4, 7}, rng, 2.0);
  TD shifted = x;
  for (auto& v : shifted.values()) v += 12.75;
  const TD a = ops::softmax_lastdim(x), b = ops::softmax_lastdim(shifted);
  for (int r = 0; r < 4; ++r) {
    double s = 0;
    for (int i = 0; i < 7; ++i) s += a[r * 7 + i];
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
  EXPECT_LT(oracle::max_abs_diff(a, b), 1e-12);
}

TEST(Concat, ChannelArithmeticAndSliceRoundTrip) {
  const std::vector<TD> parts{TD({1, 32, 2, 2}), TD({1, 64, 2, 2}), TD({1, 128, 2, 2}), TD({1, 256, 2, 2})};
  EXPECT_EQ(ops::concat_channels(parts).dim(1), 480);

  Rng rng(8);
  const TD a = random_normal<double>({2, 3, 4, 5}, rng), b = random_normal<double>({2, 2, 4, 5}, rng);
  const TD ab = ops::concat_channels(std::vector<TD>{a, b});
  EXPECT_EQ(ops::slice_channels(ab, 0, 3), a);
  EXPECT_EQ(ops::slice_channels(ab, 3, 2), b);
  EXPECT_EQ(ops::concat_channels(std::vector<TD>{a}), a);
  EXPECT_THROW(ops::concat_channels(std::vector<TD>{a, TD({2, 2, 4, 4})}), DimensionError);
}

TEST(AvgPool, CountExcludesPadding) {
  TD x({1, 1, 3, 3});
  x.at(0, 0, 1, 1) = 9.0;
  const TD y = ops::depthwise_avg_pool(x, 3, 1, 1);
  EXPECT_DOUBLE_EQ(y.at(0, 0, 1, 1), 1.0);
  EXPECT_DOUBLE_EQ(y.at(0, 0, 0, 1), 1.5);
  EXPECT_DOUBLE_EQ(y.at(0, 0, 0, 0), 2.25);
  EXPECT_LT(oracle::max_abs_diff(y, oracle::avg_pool(x, 3, 1, 1)), 1e-15);
}

TEST(AvgPool, ConstantsAndChannelIndependence) {
  const TD c = ops::depthwise_avg_pool(TD({1, 2, 5, 4}, -1.25), 3, 1, 1);
  for (double v : c.values()) EXPECT_DOUBLE_EQ(v, -1.25);

  Rng rng(9);
  TD x = random_normal<double>({1, 3, 5, 5}, rng);
  for (int i = 0; i < 5; ++i)
    for (int j = 0; j < 5; ++j) x.at(0, 1, i, j) = 0.0;
  const TD y = ops::depthwise_avg_pool(x, 3, 1, 1);
  for (int i = 0; i < 5; ++i)
    for (int j = 0; j < 5; ++j) {
      EXPECT_EQ(y.at(0, 1, i, j), 0.0);
      EXPECT_NE(y.at(0, 0, i, j), 0.0);
    }
  EXPECT_LT(oracle::max_abs_diff(ops::depthwise_avg_pool(x, 5, 2, 2), oracle::avg_pool(x, 5, 2, 2)), 1e-12);
  EXPECT_THROW(ops::depthwise_avg_pool(x, 0, 1, 0), ConfigError);
  EXPECT_THROW(ops::depthwise_avg_pool(x, -3, 1, 1), ConfigError);
}

TEST(Gelu, FixedPointAndFormula) {
  EXPECT_EQ(ops::gelu(0.0), 0.0);
  for (double v : {-3.0, -0.5, 0.1, 1.0, 4.0}) EXPECT_NEAR(ops::gelu(v), oracle::gelu(v), 1e-15);
}

TEST(Mlp, ZeroWeightsGiveBias) {
  const TD b2({4}, {1, -2, 3, 0.5});
  const TD y = ops::mlp_forward(iota({1, 4, 2, 3}), TD({8, 4}), TD({8}, 0.3), TD({4, 8}), b2, 2);
  for (int c = 0; c < 4; ++c)
    for (int i = 0; i < 6; ++i) EXPECT_EQ(y[c * 6 + i], b2[c]);
}

TEST(Mlp, MatchesPerPixelReference) {
  Rng rng(10);
  const TD x = random_normal<double>({1, 16, 2, 2}, rng);
  Mlp<double> p = Mlp<double>::init(16, 4, rng);
  p.fc1.bias = random_normal<double>({64}, rng);
  p.fc2.bias = random_normal<double>({16}, rng);
  p.fc1.weight = random_normal<double>({64, 16}, rng, 0.3);
  p.fc2.weight = random_normal<double>({16, 64}, rng, 0.3);
  const TD y = ops::mlp_forward(x, p.fc1.weight, p.fc1.bias, p.fc2.weight, p.fc2.bias, 4);
  EXPECT_LT(oracle::max_abs_diff(y, oracle::mlp(x, p)), 1e-12);
  EXPECT_THROW(ops::mlp_forward(x, p.fc1.weight, p.fc1.bias, p.fc2.weight, p.fc2.bias, 2), DimensionError);
}

TEST(Ops, Deterministic) {
  Rng rng(11);
  const TD x = random_normal<double>({2, 6, 7, 7}, rng);
  const TD w = random_normal<double>({4, 6, 3, 3}, rng);
  const TD b = random_normal<double>({4}, rng);
  EXPECT_EQ(ops::conv2d(x, w, b, 1, 1), ops::conv2d(x, w, b, 1, 1));
  EXPECT_EQ(ops::bilinear_upsample(x, 14, 14), ops::bilinear_upsample(x, 14, 14));
  const Tensor<float> xf = x.cast<float>();
  EXPECT_EQ(ops::conv2d(xf, w.cast<float>(), b.cast<float>(), 2, 1), ops::conv2d(xf, w.cast<float>(), b.cast<float>(), 2, 1));
}
