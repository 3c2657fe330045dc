#include "wtpose/backbone.hpp"

#include <algorithm>

namespace wtpose {

void BackboneConfig::validate() const {
  for (int c : stage_channels) {
    if (c < 1) throw ConfigError("backbone stage widths must be positive");
  }
  for (int b : stage_blocks) {
    if (b < 0) throw ConfigError("backbone block counts must be non-negative");
  }
  if (stem_channels < 1 || low_level_channels < 1 || head_dim < 1 || mlp_ratio < 1) {
    throw ConfigError("backbone stem/low-level widths, head_dim and mlp_ratio must be positive");
  }
  for (std::size_t s = 0; s < 4; ++s) {
    if (stage_channels[s] % stage_heads(s) != 0) {
      throw ConfigError("backbone stage " + std::to_string(s + 1) + " width is not divisible by its head count");
    }
  }
}

void BackboneConfig::validate_input(std::int64_t h, std::int64_t w) const {
  validate();
  if (h <= 0 || w <= 0 || h % 32 != 0 || w % 32 != 0) {
    throw ConfigError("input size " + std::to_string(h) + "x" + std::to_string(w) + " must be divisible by 32");
  }
}

int BackboneConfig::stage_heads(std::size_t stage) const {
  return std::max(1, stage_channels.at(stage) / head_dim);
}

int BackboneConfig::stage_window(std::int64_t h, std::int64_t w) {
  const std::int64_t m = std::min(h, w);
  if (m >= 7) return 7;
  if (m >= 3) return 3;
  return 1;
}

template <typename T>
BackboneParams<T> BackboneParams<T>::init(const BackboneConfig& cfg, std::int64_t input_h, std::int64_t input_w,
                                          Rng& rng) {
  cfg.validate_input(input_h, input_w);
  BackboneParams p;
  p.config = cfg;
  const int stem = cfg.stem_channels;
  p.stem = {Conv2d<T>::init(3, stem, 3, 2, 1, rng), LayerNorm<T>::init(stem), Conv2d<T>::init(stem, stem, 3, 2, 1, rng),
            LayerNorm<T>::init(stem)};

  const int llf = cfg.low_level_channels;
  const int mid = std::max(1, llf / 4);
  auto& b = p.bottleneck;
  b.reduce = Conv2d<T>::init(stem, mid, 1, 1, 0, rng);
  b.norm1 = LayerNorm<T>::init(mid);
  b.conv = Conv2d<T>::init(mid, mid, 3, 1, 1, rng);
  b.norm2 = LayerNorm<T>::init(mid);
  b.expand = Conv2d<T>::init(mid, llf, 1, 1, 0, rng);
  b.norm3 = LayerNorm<T>::init(llf);
  b.has_shortcut = stem != llf;
  if (b.has_shortcut) b.shortcut = Conv2d<T>::init(stem, llf, 1, 1, 0, rng);

  std::int64_t h = input_h / 4, w = input_w / 4;
  int in_ch = llf;
  for (std::size_t s = 0; s < 4; ++s) {
    auto& st = p.stages[s];
    const int out_ch = cfg.stage_channels[s];
    if (s == 0) {
      st.has_entry = in_ch != out_ch;
      if (st.has_entry) st.entry = Conv2d<T>::init(in_ch, out_ch, 1, 1, 0, rng);
    } else {
      st.has_entry = true;
      st.entry = Conv2d<T>::init(in_ch, out_ch, 3, 2, 1, rng);
      h /= 2;
      w /= 2;
    }
    const NAConfig na{BackboneConfig::stage_window(h, w), 1, cfg.stage_heads(s), out_ch};
    for (int i = 0; i < cfg.stage_blocks[s]; ++i) {
      st.blocks.push_back({LayerNorm<T>::init(out_ch), NeighborhoodAttention<T>::init(na, rng),
                           LayerNorm<T>::init(out_ch), Mlp<T>::init(out_ch, cfg.mlp_ratio, rng)});
    }
    in_ch = out_ch;
  }
  return p;
}

template <typename T>
NodeId stem_forward(Graph<T>& g, NodeId image, const StemParams<T>& p) {
  typename Graph<T>::Scope scope(g, "stem");
  const Tensor<T>& img = g.value(image);
  require_rank(img, 4, "stem input");
  if (img.dim(2) % 32 != 0 || img.dim(3) % 32 != 0) {
    throw ConfigError("stem: input " + to_string(img.shape()) + " must have height and width divisible by 32");
  }
  NodeId x = ad::gelu(g, p.norm1.forward(g, p.conv1.forward(g, image)));
  return ad::gelu(g, p.norm2.forward(g, p.conv2.forward(g, x)));
}

template <typename T>
NodeId bottleneck_forward(Graph<T>& g, NodeId x, const BottleneckParams<T>& p) {
  typename Graph<T>::Scope scope(g, "bottleneck");
  NodeId main = ad::gelu(g, p.norm1.forward(g, p.reduce.forward(g, x)));
  main = ad::gelu(g, p.norm2.forward(g, p.conv.forward(g, main)));
  main = p.norm3.forward(g, p.expand.forward(g, main));
  const NodeId shortcut = p.has_shortcut ? p.shortcut.forward(g, x) : x;
  return ad::gelu(g, ad::add(g, main, shortcut));
}

template <typename T>
NodeId stage_forward(Graph<T>& g, NodeId x, const StageParams<T>& p) {
  if (p.has_entry) x = p.entry.forward(g, x);
  for (const auto& b : p.blocks) {
    x = ad::add(g, na_forward(g, b.norm1.forward(g, x), b.attn), x);
    x = ad::add(g, b.mlp.forward(g, b.norm2.forward(g, x)), x);
  }
  return x;
}

template <typename T>
PyramidNodes backbone_forward(Graph<T>& g, NodeId image, const BackboneParams<T>& p) {
  typename Graph<T>::Scope scope(g, "backbone");
  PyramidNodes out;
  out.low_level = bottleneck_forward(g, stem_forward(g, image, p.stem), p.bottleneck);
  NodeId x = out.low_level;
  for (std::size_t s = 0; s < 4; ++s) {
    typename Graph<T>::Scope stage_scope(g, "stage" + std::to_string(s + 1));
    x = stage_forward(g, x, p.stages[s]);
    out.stages[s] = x;
  }
  return out;
}

template <typename T>
FeaturePyramid<T> backbone_forward(const Tensor<T>& image, const BackboneParams<T>& p) {
  Graph<T> g(false);
  const PyramidNodes nodes = backbone_forward(g, g.parameter(image), p);
  FeaturePyramid<T> out;
  for (std::size_t s = 0; s < 4; ++s) out.stages[s] = g.value(nodes.stages[s]);
  out.low_level = g.value(nodes.low_level);
  return out;
}

#define WTPOSE_INSTANTIATE_BACKBONE(T)                                                     \
  template struct BackboneParams<T>;                                                       \
  template NodeId stem_forward(Graph<T>&, NodeId, const StemParams<T>&);                   \
  template NodeId bottleneck_forward(Graph<T>&, NodeId, const BottleneckParams<T>&);       \
  template NodeId stage_forward(Graph<T>&, NodeId, const StageParams<T>&);                 \
  template PyramidNodes backbone_forward(Graph<T>&, NodeId, const BackboneParams<T>&);     \
  template FeaturePyramid<T> backbone_forward(const Tensor<T>&, const BackboneParams<T>&);

WTPOSE_INSTANTIATE_BACKBONE(float)
WTPOSE_INSTANTIATE_BACKBONE(double)

}  // namespace wtpose
