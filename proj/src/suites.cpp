#include "wtpose/suites.hpp"

#include <algorithm>
#include <memory>

#include "wtpose/gradcheck.hpp"
#include "wtpose/model.hpp"

namespace wtpose {

namespace {

using TensorList = std::vector<Tensor<double>*>;

// Scalar readout with fixed pseudo-random weights so every output element
// contributes a distinct slope.
NodeId project(Graph<double>& g, NodeId out) {
  Rng rng(991);
  return ad::weighted_sum(g, out, random_uniform<double>(g.value(out).shape(), rng));
}

class Suite {
 public:
  explicit Suite(std::uint64_t seed) : rng_(seed) {}

  Tensor<double>* tensor(Shape shape, double lo = -1.0, double hi = 1.0) {
    store_.push_back(std::make_unique<Tensor<double>>(random_uniform<double>(std::move(shape), rng_, lo, hi)));
    return store_.back().get();
  }

  // Random weights of a useful scale; norms near 1.
  template <typename P>
  TensorList randomize(P& params, const std::string& name) {
    TensorList out;
    auto fill = [&](const std::string& n, Tensor<double>& t) {
      const bool gamma = n.size() >= 6 && n.compare(n.size() - 6, 6, ".gamma") == 0;
      for (auto& v : t.values()) v = gamma ? 1.0 + rng_.normal(0.0, 0.1) : rng_.normal(0.0, 0.3);
      out.push_back(&t);
    };
    if constexpr (requires { params.visit(fill); }) {
      params.visit(fill);
    } else {
      params.visit(name, fill);
    }
    return out;
  }

  void check(const std::string& component, double threshold, const LossBuilder& loss, const TensorList& wrt,
             std::size_t max_coords = 0) {
    GradCheckOptions opts;
    opts.max_coords_per_tensor = max_coords;
    opts.seed = rng_.engine()();
    const GradCheckReport r = finite_diff_check(loss, wrt, opts);
    auto it = std::find_if(results_.begin(), results_.end(),
                           [&](const SuiteResult& s) { return s.component == component; });
    if (it == results_.end()) {
      results_.push_back({component, r.max_rel_error, threshold, r.coords_checked});
    } else {
      it->max_error = std::max(it->max_error, r.max_rel_error);
      it->coords += r.coords_checked;
    }
    for (Tensor<double>* t : wrt) t->drop_grad();
  }

  Rng& rng() { return rng_; }
  std::vector<SuiteResult> take() { return std::move(results_); }

 private:
  Rng rng_;
  std::vector<std::unique_ptr<Tensor<double>>> store_;
  std::vector<SuiteResult> results_;
};

constexpr double kPrimitiveTol = 1e-6;
constexpr double kComposedTol = 1e-4;
constexpr double kHeadTol = 1e-5;

void primitives(Suite& s) {
  struct ConvCase {
    Shape x, w;
    int stride, pad;
  };
  for (const ConvCase& c : {ConvCase{{1, 2, 5, 5}, {3, 2, 3, 3}, 1, 1}, ConvCase{{2, 3, 6, 6}, {2, 3, 3, 3}, 2, 1},
                            ConvCase{{1, 4, 4, 5}, {3, 4, 1, 1}, 1, 0}}) {
    auto* x = s.tensor(c.x);
    auto* w = s.tensor(c.w);
    auto* b = s.tensor({c.w[0]});
    s.check("conv2d", kPrimitiveTol, [=](Graph<double>& g) {
      return project(g, ad::conv2d(g, g.parameter(*x), g.parameter(*w), g.parameter(*b), c.stride, c.pad));
    }, {x, w, b});
  }
  for (const Shape& sh : {Shape{1, 2, 3, 4}, Shape{2, 5, 2, 2}, Shape{1, 3, 1, 3}}) {
    auto* x = s.tensor(sh);
    auto* w = s.tensor({3, sh[1]});
    auto* b = s.tensor({3});
    s.check("linear", kPrimitiveTol, [=](Graph<double>& g) {
      return project(g, ad::linear(g, g.parameter(*x), g.parameter(*w), g.parameter(*b)));
    }, {x, w, b});
  }
  struct UpCase {
    Shape x;
    std::int64_t h, w;
  };
  for (const UpCase& c : {UpCase{{1, 2, 2, 2}, 4, 4}, UpCase{{1, 1, 3, 2}, 7, 5}, UpCase{{2, 2, 1, 3}, 3, 6}}) {
    auto* x = s.tensor(c.x);
    s.check("bilinear_upsample", kPrimitiveTol,
            [=](Graph<double>& g) { return project(g, ad::bilinear_upsample(g, g.parameter(*x), c.h, c.w)); }, {x});
  }
  for (const Shape& sh : {Shape{1, 4, 2, 2}, Shape{2, 3, 3, 1}, Shape{1, 7, 2, 3}}) {
    auto* x = s.tensor(sh);
    auto* gamma = s.tensor({sh[1]}, 0.5, 1.5);
    auto* beta = s.tensor({sh[1]});
    s.check("layer_norm", kPrimitiveTol, [=](Graph<double>& g) {
      return project(g, ad::layer_norm(g, g.parameter(*x), g.parameter(*gamma), g.parameter(*beta)));
    }, {x, gamma, beta});
  }
  for (const Shape& sh : {Shape{7}, Shape{3, 4}, Shape{2, 2, 5}}) {
    auto* x = s.tensor(sh, -2.0, 2.0);
    s.check("softmax_lastdim", kPrimitiveTol, [=](Graph<double>& g) {
      return ad::half_sum_squares(g, ad::softmax_lastdim(g, g.parameter(*x)));
    }, {x});
  }
  for (const std::vector<std::int64_t>& chans : {std::vector<std::int64_t>{1, 2}, {3}, {2, 1, 2}}) {
    TensorList xs;
    for (auto c : chans) xs.push_back(s.tensor({1, c, 2, 3}));
    s.check("concat_channels", kPrimitiveTol, [=](Graph<double>& g) {
      std::vector<NodeId> ids;
      for (auto* t : xs) ids.push_back(g.parameter(*t));
      return project(g, ad::concat_channels(g, ids));
    }, xs);
  }
  struct PoolCase {
    Shape x;
    int k, stride, pad;
  };
  for (const PoolCase& c : {PoolCase{{1, 2, 4, 4}, 3, 1, 1}, PoolCase{{1, 1, 5, 6}, 3, 2, 1},
                            PoolCase{{2, 2, 5, 5}, 5, 1, 2}}) {
    auto* x = s.tensor(c.x);
    s.check("depthwise_avg_pool", kPrimitiveTol, [=](Graph<double>& g) {
      return project(g, ad::depthwise_avg_pool(g, g.parameter(*x), c.k, c.stride, c.pad));
    }, {x});
  }
  for (const Shape& sh : {Shape{5}, Shape{2, 3}, Shape{1, 2, 2, 2}}) {
    auto* x = s.tensor(sh, -3.0, 3.0);
    s.check("gelu", kPrimitiveTol, [=](Graph<double>& g) { return project(g, ad::gelu(g, g.parameter(*x))); }, {x});
  }
  for (const Shape& sh : {Shape{4}, Shape{2, 3}, Shape{1, 2, 3, 2}}) {
    auto* a = s.tensor(sh);
    auto* b = s.tensor(sh);
    s.check("add", kPrimitiveTol,
            [=](Graph<double>& g) { return project(g, ad::add(g, g.parameter(*a), g.parameter(*b))); }, {a, b});
    s.check("sum", kPrimitiveTol, [=](Graph<double>& g) { return ad::sum(g, g.parameter(*a)); }, {a});
    s.check("half_sum_squares", kPrimitiveTol,
            [=](Graph<double>& g) { return ad::half_sum_squares(g, g.parameter(*a)); }, {a});
  }
  for (const Shape& sh : {Shape{1, 2, 3, 3}, Shape{2, 3, 2, 2}, Shape{1, 4, 1, 5}}) {
    auto* pred = s.tensor(sh);
    const Tensor<double> target = *s.tensor(sh, 0.0, 1.0);
    Tensor<double> mask({sh[0], sh[1]});
    for (std::size_t i = 0; i < mask.numel(); ++i) mask[i] = i % 3 == 1 ? 0.0 : 1.0;
    s.check("mse_loss_visible", kPrimitiveTol, [=](Graph<double>& g) {
      return ad::mse_loss_visible(g, g.parameter(*pred), target, mask);
    }, {pred});
  }
  for (const std::pair<Shape, int>& c : {std::pair<Shape, int>{{1, 3, 2, 2}, 2}, {{2, 2, 1, 3}, 4}, {{1, 4, 2, 1}, 1}}) {
    const auto ch = c.first[1];
    auto* x = s.tensor(c.first);
    auto* w1 = s.tensor({ch * c.second, ch});
    auto* b1 = s.tensor({ch * c.second});
    auto* w2 = s.tensor({ch, ch * c.second});
    auto* b2 = s.tensor({ch});
    s.check("mlp", kPrimitiveTol, [=](Graph<double>& g) {
      return project(g, ad::mlp(g, g.parameter(*x), g.parameter(*w1), g.parameter(*b1), g.parameter(*w2),
                                g.parameter(*b2)));
    }, {x, w1, b1, w2, b2});
  }
}

void attention(Suite& s) {
  struct Case {
    std::int64_t h, w;
    NAConfig cfg;
  };
  for (const Case& c : {Case{5, 5, {3, 1, 2, 4}}, Case{6, 7, {3, 2, 1, 3}}, Case{8, 8, {5, 1, 2, 2}}}) {
    auto* q = s.tensor({1, c.cfg.channels, c.h, c.w});
    auto* k = s.tensor({1, c.cfg.channels, c.h, c.w});
    auto* v = s.tensor({1, c.cfg.channels, c.h, c.w});
    auto* rpb = s.tensor({c.cfg.heads, 2 * c.cfg.window - 1, 2 * c.cfg.window - 1});
    s.check("attention_core", kPrimitiveTol, [=](Graph<double>& g) {
      return project(g, neighborhood_attention_core(g, g.parameter(*q), g.parameter(*k), g.parameter(*v),
                                                    g.parameter(*rpb), c.cfg));
    }, {q, k, v, rpb});

    auto layer = std::make_shared<NeighborhoodAttention<double>>(NeighborhoodAttention<double>::init(c.cfg, s.rng()));
    TensorList wrt = s.randomize(*layer, "na");
    auto* x = s.tensor({1, c.cfg.channels, c.h, c.w});
    wrt.push_back(x);
    s.check("attention_layer", kPrimitiveTol,
            [=](Graph<double>& g) { return project(g, na_forward(g, g.parameter(*x), *layer)); }, wrt);
  }
}

WTMConfig minimal_wtm() {
  WTMConfig c;
  c.channels = 4;
  c.heads = 2;
  c.window = 3;
  c.blocks = {{{2, 1}, {2, 1}, {2, 1}, {2, 1}}};
  c.mlp_ratio = 2;
  c.low_level_channels = 2;
  c.out_channels = 3;
  return c;
}

void wtb(Suite& s) {
  WTMConfig cfg = minimal_wtm();
  cfg.blocks[0] = {2, 1};
  auto block = std::make_shared<WTBParams<double>>(WTBParams<double>::init(cfg, 0, s.rng()));
  TensorList wrt = s.randomize(*block, "wtb");
  auto* z = s.tensor({1, cfg.channels, 6, 6});
  wrt.push_back(z);
  s.check("wtb", kComposedTol, [=](Graph<double>& g) { return project(g, wtb_forward(g, g.parameter(*z), *block)); },
          wrt, 12);
}

void wtm(Suite& s) {
  const WTMConfig cfg = minimal_wtm();
  const std::array<std::int64_t, 4> chans{2, 2, 3, 3};
  auto params = std::make_shared<WTMParams<double>>(WTMParams<double>::init(cfg, 10, 2, s.rng()));
  TensorList wrt = s.randomize(*params, "wtm");
  std::array<Tensor<double>*, 4> stages{};
  for (std::size_t i = 0; i < 4; ++i) {
    const std::int64_t side = 8 >> i;
    stages[i] = s.tensor({1, chans[i], side, side});
    wrt.push_back(stages[i]);
  }
  auto* llf = s.tensor({1, 2, 8, 8});
  wrt.push_back(llf);
  s.check("wtm", kComposedTol, [=](Graph<double>& g) {
    PyramidNodes p;
    for (std::size_t i = 0; i < 4; ++i) p.stages[i] = g.parameter(*stages[i]);
    p.low_level = g.parameter(*llf);
    return project(g, wtm_forward(g, p, *params));
  }, wrt, 8);
}

void head(Suite& s) {
  auto params = std::make_shared<HeadParams<double>>(HeadParams<double>::init(4, 3, s.rng()));
  TensorList wrt = s.randomize(*params, "head");
  auto* f = s.tensor({2, 4, 5, 5});
  wrt.push_back(f);
  const Tensor<double> target = *s.tensor({2, 3, 5, 5}, 0.0, 1.0);
  Tensor<double> mask({2, 3}, 1.0);
  mask[4] = 0.0;
  s.check("head_loss", kHeadTol, [=](Graph<double>& g) {
    return ad::mse_loss_visible(g, head_forward(g, g.parameter(*f), *params), target, mask);
  }, wrt);
}

ModelConfig tiny_model() {
  ModelConfig m;
  m.backbone.stage_channels = {4, 4, 8, 8};
  m.backbone.stem_channels = 4;
  m.backbone.low_level_channels = 4;
  m.backbone.head_dim = 4;
  m.backbone.mlp_ratio = 2;
  m.wtm = minimal_wtm();
  m.joints = 3;
  return m;
}

void backbone_and_model(Suite& s) {
  const ModelConfig cfg = tiny_model();
  {
    auto bb = std::make_shared<BackboneParams<double>>(BackboneParams<double>::init(cfg.backbone, 32, 32, s.rng()));
    TensorList wrt = s.randomize(*bb, "backbone");
    auto* img = s.tensor({1, 3, 32, 32});
    wrt.push_back(img);
    s.check("backbone", kComposedTol, [=](Graph<double>& g) {
      const PyramidNodes p = backbone_forward(g, g.parameter(*img), *bb);
      std::vector<NodeId> parts;
      for (NodeId n : p.stages) parts.push_back(project(g, n));
      parts.push_back(project(g, p.low_level));
      NodeId total = parts[0];
      for (std::size_t i = 1; i < parts.size(); ++i) total = ad::add(g, total, parts[i]);
      return total;
    }, wrt, 4);
  }
  auto model = std::make_shared<PoseModel<double>>(PoseModel<double>::init(cfg, 32, 32, 3));
  TensorList wrt = s.randomize(*model, "model");
  auto* img = s.tensor({1, 3, 32, 32});
  wrt.push_back(img);
  s.check("model", kComposedTol, [=](Graph<double>& g) { return project(g, model->forward(g, g.parameter(*img))); },
          wrt, 3);
}

}  // namespace

std::optional<GradScope> parse_grad_scope(const std::string& s) {
  if (s == "primitive") return GradScope::primitive;
  if (s == "attention") return GradScope::attention;
  if (s == "wtb") return GradScope::wtb;
  if (s == "wtm") return GradScope::wtm;
  if (s == "full") return GradScope::full;
  return std::nullopt;
}

std::vector<SuiteResult> run_gradcheck_suite(GradScope scope, std::uint64_t seed) {
  Suite s(seed);
  const bool all = scope == GradScope::full;
  if (all || scope == GradScope::primitive) primitives(s);
  if (all || scope == GradScope::attention) attention(s);
  if (all || scope == GradScope::wtb) wtb(s);
  if (all || scope == GradScope::wtm) wtm(s);
  if (all) {
    head(s);
    backbone_and_model(s);
  }
  return s.take();
}

}  // namespace wtpose
