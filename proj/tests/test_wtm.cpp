#include <gtest/gtest.h>

#include <array>
#include <string>

#include "oracles.hpp"
#include "wtpose/suites.hpp"
#include "wtpose/wtm.hpp"

using namespace wtpose;
using TD = Tensor<double>;

namespace {

template <typename P>
void randomize(P& params, Rng& rng, double scale = 0.2) {
  params.visit("p", [&](const std::string& name, TD& t) {
    const bool gamma = name.size() >= 6 && name.compare(name.size() - 6, 6, ".gamma") == 0;
    for (auto& v : t.values()) v = gamma ? 1.0 + rng.normal(0.0, 0.1) : rng.normal(0.0, scale);
  });
}

WTMConfig small_config(int channels = 8, int heads = 2) {
  WTMConfig c;
  c.channels = channels;
  c.heads = heads;
  c.mlp_ratio = 2;
  c.window = 3;
  c.blocks = {{{2, 1}, {2, 1}, {3, 1}, {2, 1}}};
  c.low_level_channels = 6;
  c.out_channels = 5;
  return c;
}

std::array<TD, 4> random_stages(std::int64_t n, const std::array<int, 4>& ch, std::int64_t h, std::int64_t w,
                                Rng& rng) {
  std::array<TD, 4> s;
  for (int i = 0; i < 4; ++i) s[i] = random_normal<double>({n, ch[i], h >> i, w >> i}, rng);
  return s;
}

struct WtmRun {
  TD g0, z0, waterfall, output;
  std::array<TD, 4> branches;
};

WtmRun run_wtm(const std::array<TD, 4>& stages, const TD& llf, const WTMParams<double>& p) {
  Graph<double> g(false);
  std::array<NodeId, 4> ids{};
  for (int i = 0; i < 4; ++i) ids[i] = g.parameter(stages[i]);
  const NodeId g0 = fuse_pyramid(g, ids);
  const NodeId z0 = reduce_channels(g, g0, p);
  const WaterfallNodes wf = waterfall_forward(g, z0, g0, p);
  const NodeId out = merge_low_level(g, wf.output, g.parameter(llf), p);
  WtmRun r{g.value(g0), g.value(z0), g.value(wf.output), g.value(out), {}};
  for (int i = 0; i < 4; ++i) r.branches[i] = g.value(wf.branches[i]);
  return r;
}

}  // namespace

TEST(WTMConfig, DefaultScheduleReceptiveFields) {
  const WTMConfig c;
  std::array<std::int64_t, 4> d{}, n{};
  for (std::size_t b = 0; b < 4; ++b) {
    d[b] = receptive_field(c.dilated_attention(b).window, c.dilated_attention(b).dilation);
    n[b] = receptive_field(c.local_attention(b).window, c.local_attention(b).dilation);
  }
  EXPECT_EQ(d, (std::array<std::int64_t, 4>{13, 25, 25, 49}));
  EXPECT_EQ(n, (std::array<std::int64_t, 4>{7, 7, 7, 7}));
  EXPECT_EQ(c.channels, 128);
  EXPECT_EQ(c.heads, 8);
  EXPECT_EQ(c.window, 7);
}

TEST(WTMConfig, FittedWindowsAndValidation) {
  const WTMConfig c;
  EXPECT_THROW(c.validate_for(24, 24), ConfigError);
  const WTMConfig f = c.fitted_to(24, 24);
  EXPECT_EQ(f.dilated_windows, (std::array<int, 4>{7, 5, 5, 3}));
  EXPECT_NO_THROW(f.validate_for(24, 24));
  EXPECT_EQ(c.fitted_to(56, 56).dilated_windows, (std::array<int, 4>{7, 7, 7, 7}));
  WTMConfig bad = c;
  bad.dwp_kernel = 2;
  EXPECT_THROW(bad.validate(), ConfigError);
}

TEST(FusePyramid, ChannelArithmeticAndLadder) {
  const std::array<TD, 4> bad{TD({2, 32, 12, 10}), TD({2, 64, 6, 5}), TD({2, 128, 3, 3}), TD({2, 256, 2, 2})};
  EXPECT_THROW(fuse_pyramid(bad), DimensionError);
  const std::array<TD, 4> good{TD({2, 32, 16, 8}), TD({2, 64, 8, 4}), TD({2, 128, 4, 2}), TD({2, 256, 2, 1})};
  EXPECT_EQ(fuse_pyramid(good).shape(), (Shape{2, 480, 16, 8}));
}

TEST(FusePyramid, ConstantStagesGiveConstantBlocks) {
  const std::array<int, 4> ch{2, 3, 4, 5};
  std::array<TD, 4> s;
  for (int i = 0; i < 4; ++i) s[i] = TD({1, ch[i], 16 >> i, 16 >> i}, 0.5 + i);
  const TD g0 = fuse_pyramid(s);
  std::int64_t c = 0;
  for (int i = 0; i < 4; ++i)
    for (int k = 0; k < ch[i]; ++k, ++c)
      for (int y = 0; y < 16; ++y)
        for (int x = 0; x < 16; ++x) EXPECT_EQ(g0.at(0, c, y, x), 0.5 + i);
}

TEST(ReduceChannels, SelectorAndZeroWeight) {
  Rng rng(3);
  const WTMConfig cfg = small_config();
  WTMParams<double> p = WTMParams<double>::init(cfg, 20, 4, rng);
  const TD g0 = random_normal<double>({1, 20, 6, 6}, rng);

  p.reduce.weight = TD({8, 20, 1, 1});
  for (int o = 0; o < 8; ++o) p.reduce.weight.at(o, o, 0, 0) = 1.0;
  Graph<double> g(false);
  EXPECT_EQ(g.value(reduce_channels(g, g.parameter(g0), p)), ops::slice_channels(g0, 0, 8));

  p.reduce.weight = TD({8, 20, 1, 1});
  p.reduce.bias = TD({8}, 0.75);
  for (double v : g.value(reduce_channels(g, g.parameter(g0), p)).values()) EXPECT_EQ(v, 0.75);

  p.reduce.weight = random_normal<double>({8, 20, 1, 1}, rng);
  p.reduce.bias = random_normal<double>({8}, rng);
  const TD z0 = g.value(reduce_channels(g, g.parameter(g0), p));
  EXPECT_LT(oracle::max_abs_diff(z0, oracle::conv2d(g0, p.reduce.weight, p.reduce.bias, 1, 0)), 1e-12);
}

TEST(WTB, ZeroSublayerOutputsIsBitExactIdentity) {
  Rng rng(4);
  const WTMConfig cfg = small_config();
  for (std::size_t b = 0; b < 4; ++b) {
    WTBParams<double> p = WTBParams<double>::init(cfg, b, rng);
    randomize(p, rng);
    p.zero_sublayer_outputs();
    const TD z = random_normal<double>({2, 8, 9, 10}, rng, 3.0);
    EXPECT_EQ(wtb_forward(z, p), z);
  }
}

TEST(WTB, ZeroWeightsLeaveBiasContributions) {
  Rng rng(5);
  const WTMConfig cfg = small_config();
  WTBParams<double> p = WTBParams<double>::init(cfg, 0, rng);
  p.visit("p", [](const std::string&, TD& t) {
    for (auto& v : t.values()) v = 0.0;
  });
  for (auto& n : p.norms) n.gamma = TD({8}, 1.0);
  p.dilated.proj.output.bias = TD({8}, 0.5);
  p.mlp_dilated.fc2.bias = TD({8}, 0.25);
  p.local.proj.output.bias = TD({8}, -1.0);
  p.mlp_local.fc2.bias = TD({8}, 2.0);
  const TD z = random_normal<double>({1, 8, 6, 6}, rng);
  const TD y = wtb_forward(z, p);
  for (std::size_t i = 0; i < z.numel(); ++i) EXPECT_NEAR(y[i], z[i] + 1.75, 1e-14);
}

TEST(WTB, MatchesComposedOracle) {
  Rng rng(6);
  WTMConfig cfg = small_config();
  cfg.window = 7;
  cfg = cfg.fitted_to(13, 13);
  WTBParams<double> p = WTBParams<double>::init(cfg, 0, rng);
  randomize(p, rng);
  ASSERT_EQ(p.dilated.config.dilation, 2);
  const TD z = random_normal<double>({1, 8, 13, 13}, rng);
  const TD y = wtb_forward(z, p);
  EXPECT_EQ(y.shape(), z.shape());
  EXPECT_LT(oracle::max_abs_diff(y, oracle::wtb(z, p)), 1e-9);
}

TEST(Waterfall, IdentityBlocksCopyTheInput) {
  Rng rng(7);
  const WTMConfig cfg = small_config();
  WTMParams<double> p = WTMParams<double>::init(cfg, 14, 4, rng);
  randomize(p, rng);
  p.zero_sublayer_outputs();
  const auto stages = random_stages(1, {2, 3, 4, 5}, 16, 16, rng);
  const TD llf = random_normal<double>({1, 4, 16, 16}, rng);
  const WtmRun r = run_wtm(stages, llf, p);
  for (const TD& b : r.branches) EXPECT_EQ(b, r.z0);
  EXPECT_EQ(r.waterfall.shape(), (Shape{1, 8, 16, 16}));
}

TEST(MergeLowLevel, ZeroBranchAndShape) {
  Rng rng(8);
  const WTMConfig cfg = small_config();
  WTMParams<double> p = WTMParams<double>::init(cfg, 14, 4, rng);
  randomize(p, rng);
  const TD fw = random_normal<double>({2, 8, 6, 7}, rng);
  const TD llf = random_normal<double>({2, 4, 6, 7}, rng);
  Graph<double> g(false);
  const TD out = g.value(merge_low_level(g, g.parameter(fw), g.parameter(llf), p));
  EXPECT_EQ(out.shape(), (Shape{2, 5, 6, 7}));
  EXPECT_LT(oracle::max_abs_diff(out, oracle::merge_low_level(fw, llf, p)), 1e-12);

  p.low_level_reduce.weight = TD(p.low_level_reduce.weight.shape());
  p.low_level_reduce.bias = TD(p.low_level_reduce.bias.shape());
  const TD a = g.value(merge_low_level(g, g.parameter(fw), g.parameter(random_normal<double>({2, 4, 6, 7}, rng)), p));
  const TD b = g.value(merge_low_level(g, g.parameter(fw), g.parameter(random_normal<double>({2, 4, 6, 7}, rng)), p));
  EXPECT_EQ(a, b);
  EXPECT_THROW(merge_low_level(g, g.parameter(fw), g.parameter(TD({2, 4, 6, 6})), p), DimensionError);
}

TEST(WTM, ComposedOracleAtEveryStage) {
  Rng rng(9);
  const WTMConfig cfg = small_config();
  WTMParams<double> p = WTMParams<double>::init(cfg, 14, 4, rng);
  randomize(p, rng);
  const auto stages = random_stages(2, {2, 3, 4, 5}, 16, 16, rng);
  const TD llf = random_normal<double>({2, 4, 16, 16}, rng);
  const WtmRun r = run_wtm(stages, llf, p);
  const oracle::WtmTrace t = oracle::wtm(stages, llf, p);
  EXPECT_LT(oracle::max_abs_diff(r.g0, t.g0), 1e-12);
  EXPECT_LT(oracle::max_abs_diff(r.z0, t.z0), 1e-12);
  for (int i = 0; i < 4; ++i) EXPECT_LT(oracle::max_abs_diff(r.branches[i], t.branches[i]), 1e-9);
  EXPECT_LT(oracle::max_abs_diff(r.waterfall, t.waterfall), 1e-9);
  EXPECT_LT(oracle::max_abs_diff(r.output, t.output), 1e-9);
  EXPECT_EQ(r.waterfall.dim(1), cfg.channels);
}

TEST(WTM, DefaultConfigShapeContract) {
  Rng rng(10);
  const WTMConfig cfg;
  const std::array<int, 4> ch{32, 64, 128, 256};
  WTMParams<float> p = WTMParams<float>::init(cfg, 480, 64, rng);
  for (auto [h, w] : {std::pair{224, 224}, std::pair{256, 224}}) {
    Graph<float> g(false);
    PyramidNodes nodes;
    for (int i = 0; i < 4; ++i)
      nodes.stages[i] = g.constant(random_normal<float>({1, ch[i], (h / 4) >> i, (w / 4) >> i}, rng));
    nodes.low_level = g.constant(random_normal<float>({1, 64, h / 4, w / 4}, rng));
    EXPECT_EQ(g.value(wtm_forward(g, nodes, p)).shape(), (Shape{1, 128, h / 4, w / 4}));
  }
}

TEST(WTM, FittedConfigAtNinetySix) {
  Rng rng(11);
  const WTMConfig cfg = WTMConfig{}.fitted_to(24, 24);
  WTMParams<float> p = WTMParams<float>::init(cfg, 480, 64, rng);
  Graph<float> g(false);
  PyramidNodes nodes;
  const std::array<int, 4> ch{32, 64, 128, 256};
  for (int i = 0; i < 4; ++i) nodes.stages[i] = g.constant(random_normal<float>({2, ch[i], 24 >> i, 24 >> i}, rng));
  nodes.low_level = g.constant(random_normal<float>({2, 64, 24, 24}, rng));
  EXPECT_EQ(g.value(wtm_forward(g, nodes, p)).shape(), (Shape{2, 128, 24, 24}));
}

TEST(WTM, DeterministicAndCascadeConnected) {
  Rng rng(12);
  const WTMConfig cfg = small_config();
  WTMParams<double> p = WTMParams<double>::init(cfg, 14, 4, rng);
  randomize(p, rng);
  const auto stages = random_stages(1, {2, 3, 4, 5}, 16, 16, rng);
  const TD llf = random_normal<double>({1, 4, 16, 16}, rng);
  const WtmRun a = run_wtm(stages, llf, p), b = run_wtm(stages, llf, p);
  EXPECT_EQ(a.output, b.output);

  // z4 responds to z0
  Graph<double> g;
  const NodeId z0 = g.variable(a.z0);
  NodeId z = z0;
  for (const auto& blk : p.blocks) z = wtb_forward(g, z, blk);
  g.backward(ad::sum(g, z));
  double norm = 0;
  for (double v : g.grad(z0)) norm += v * v;
  EXPECT_GT(norm, 1e-6);

  // and the loss reaches stage 1
  Graph<double> g2;
  PyramidNodes nodes;
  for (int i = 0; i < 4; ++i) nodes.stages[i] = g2.variable(stages[i]);
  nodes.low_level = g2.variable(llf);
  g2.backward(ad::sum(g2, wtm_forward(g2, nodes, p)));
  norm = 0;
  for (double v : g2.grad(nodes.stages[0])) norm += v * v;
  EXPECT_GT(norm, 1e-6);
}

TEST(WTM, GradientSuites) {
  for (GradScope s : {GradScope::wtb, GradScope::wtm}) {
    for (const auto& r : run_gradcheck_suite(s)) {
      EXPECT_TRUE(r.pass()) << r.component << " " << r.max_error;
      EXPECT_LE(r.threshold, 1e-4);
    }
  }
}
