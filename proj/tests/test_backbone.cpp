#include <gtest/gtest.h>

#include <string>

#include "oracles.hpp"
#include "wtpose/backbone.hpp"
#include "wtpose/suites.hpp"

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

BackboneConfig tiny_config() {
  BackboneConfig c;
  c.stage_channels = {4, 8, 8, 8};
  c.stem_channels = 4;
  c.low_level_channels = 6;
  c.head_dim = 4;
  c.mlp_ratio = 2;
  return c;
}

TD run_stem(const TD& img, const StemParams<double>& p) {
  Graph<double> g(false);
  return g.value(stem_forward(g, g.parameter(img), p));
}

TD run_bottleneck(const TD& x, const BottleneckParams<double>& p) {
  Graph<double> g(false);
  return g.value(bottleneck_forward(g, g.parameter(x), p));
}

TD run_stage(const TD& x, const StageParams<double>& p) {
  Graph<double> g(false);
  return g.value(stage_forward(g, g.parameter(x), p));
}

TD conv(const TD& x, const Conv2d<double>& c) { return oracle::conv2d(x, c.weight, c.bias, c.stride, c.padding); }
TD ln(const TD& x, const LayerNorm<double>& n) { return oracle::layer_norm(x, n.gamma, n.beta); }

}  // namespace

TEST(Stem, StrideFourAndSizeCheck) {
  Rng rng(1);
  const auto p = BackboneParams<double>::init(tiny_config(), 96, 96, rng);
  EXPECT_EQ(run_stem(TD({1, 3, 96, 96}), p.stem).shape(), (Shape{1, 4, 24, 24}));
  EXPECT_THROW(run_stem(TD({1, 3, 80, 96}), p.stem), ConfigError);
  EXPECT_THROW(BackboneParams<double>::init(tiny_config(), 96, 100, rng), ConfigError);
}

TEST(Stem, ZeroWeightsGiveConstantMaps) {
  Rng rng(2);
  auto p = BackboneParams<double>::init(tiny_config(), 32, 32, rng);
  for (Conv2d<double>* c : {&p.stem.conv1, &p.stem.conv2}) {
    c->weight = TD(c->weight.shape());
    c->bias = TD(c->bias.shape(), 0.4);
  }
  const TD y = run_stem(random_normal<double>({1, 3, 32, 32}, rng), p.stem);
  // every channel equal, so each norm returns beta = 0 and GELU(0) = 0
  for (double v : y.values()) EXPECT_EQ(v, y[0]);
  EXPECT_EQ(y[0], 0.0);
}

TEST(Stem, MatchesConvOracle) {
  Rng rng(3);
  auto p = BackboneParams<double>::init(tiny_config(), 32, 32, rng);
  randomize(p, rng);
  const TD img = random_normal<double>({2, 3, 32, 32}, rng);
  const TD expect =
      oracle::gelu(ln(conv(oracle::gelu(ln(conv(img, p.stem.conv1), p.stem.norm1)), p.stem.conv2), p.stem.norm2));
  EXPECT_LT(oracle::max_abs_diff(run_stem(img, p.stem), expect), 1e-12);
}

TEST(Bottleneck, ResidualDegenerateAndOracle) {
  Rng rng(4);
  auto p = BackboneParams<double>::init(tiny_config(), 32, 32, rng);
  randomize(p, rng);
  const TD x = random_normal<double>({1, 4, 8, 8}, rng);
  const auto& b = p.bottleneck;
  ASSERT_TRUE(b.has_shortcut);
  TD main = oracle::gelu(ln(conv(x, b.reduce), b.norm1));
  main = oracle::gelu(ln(conv(main, b.conv), b.norm2));
  main = ln(conv(main, b.expand), b.norm3);
  const TD expect = oracle::gelu(oracle::add(main, conv(x, b.shortcut)));
  const TD y = run_bottleneck(x, b);
  EXPECT_EQ(y.shape(), (Shape{1, 6, 8, 8}));
  EXPECT_LT(oracle::max_abs_diff(y, expect), 1e-12);

  auto z = p.bottleneck;
  z.expand.weight = TD(z.expand.weight.shape());
  z.expand.bias = TD(z.expand.bias.shape());
  z.norm3.beta = TD(z.norm3.beta.shape());
  EXPECT_LT(oracle::max_abs_diff(run_bottleneck(x, z), oracle::gelu(conv(x, z.shortcut))), 1e-15);
}

TEST(Stage, ShapesAndIdentityBlocks) {
  Rng rng(5);
  auto p = BackboneParams<double>::init(tiny_config(), 64, 64, rng);
  randomize(p, rng);
  const TD x1 = random_normal<double>({1, 6, 16, 16}, rng);
  const TD s1 = run_stage(x1, p.stages[0]);
  EXPECT_EQ(s1.shape(), (Shape{1, 4, 16, 16}));
  const TD s2 = run_stage(s1, p.stages[1]);
  EXPECT_EQ(s2.shape(), (Shape{1, 8, 8, 8}));

  for (auto& blk : p.stages[1].blocks) blk.zero_sublayer_outputs();
  EXPECT_EQ(run_stage(s1, p.stages[1]), conv(s1, p.stages[1].entry));
}

TEST(Backbone, DefaultPyramidAtNinetySix) {
  Rng rng(6);
  const BackboneConfig cfg;
  const auto p = BackboneParams<float>::init(cfg, 96, 96, rng);
  const FeaturePyramid<float> f = backbone_forward(random_normal<float>({2, 3, 96, 96}, rng), p);
  EXPECT_EQ(f.stages[0].shape(), (Shape{2, 32, 24, 24}));
  EXPECT_EQ(f.stages[1].shape(), (Shape{2, 64, 12, 12}));
  EXPECT_EQ(f.stages[2].shape(), (Shape{2, 128, 6, 6}));
  EXPECT_EQ(f.stages[3].shape(), (Shape{2, 256, 3, 3}));
  EXPECT_EQ(f.low_level.shape(), (Shape{2, 64, 24, 24}));
  EXPECT_EQ(BackboneConfig::stage_window(24, 24), 7);
  EXPECT_EQ(BackboneConfig::stage_window(6, 6), 3);
  EXPECT_EQ(BackboneConfig::stage_window(3, 3), 3);
}

TEST(Backbone, DeterministicAndReachesStem) {
  Rng rng(7);
  auto p = BackboneParams<double>::init(tiny_config(), 64, 64, rng);
  randomize(p, rng);
  const TD img = random_normal<double>({1, 3, 64, 64}, rng);
  const auto a = backbone_forward(img, p), b = backbone_forward(img, p);
  for (int s = 0; s < 4; ++s) EXPECT_EQ(a.stages[s], b.stages[s]);
  EXPECT_EQ(a.low_level, b.low_level);
  EXPECT_EQ(a.low_level.dim(2), a.stages[0].dim(2));

  Graph<double> g;
  const PyramidNodes nodes = backbone_forward(g, g.constant(img), p);
  g.backward(ad::half_sum_squares(g, nodes.stages[3]));
  double norm = 0;
  for (double v : p.stem.conv1.weight.grad()) norm += v * v;
  EXPECT_GT(norm, 0.0);
}

TEST(Backbone, GradientCheckThroughFullScope) {
  for (const auto& r : run_gradcheck_suite(GradScope::full)) {
    if (r.component != "backbone" && r.component != "model" && r.component != "head_loss") continue;
    EXPECT_TRUE(r.pass()) << r.component << " " << r.max_error;
  }
}
