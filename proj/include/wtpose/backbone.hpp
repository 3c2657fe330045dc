#pragma once

#include <array>
#include <string>
#include <vector>

#include "wtpose/attention.hpp"
#include "wtpose/layers.hpp"
#include "wtpose/wtm.hpp"

namespace wtpose {

// Hierarchical stand-in for the modified Swin backbone. Stages use
// non-dilated neighborhood-attention blocks instead of shifted windows.
struct BackboneConfig {
  std::array<int, 4> stage_channels{32, 64, 128, 256};
  std::array<int, 4> stage_blocks{1, 1, 1, 1};
  int stem_channels = 32;
  int low_level_channels = 64;
  int head_dim = 16;  // attention heads per stage = channels / head_dim (at least 1)
  int mlp_ratio = 4;

  void validate() const;
  void validate_input(std::int64_t h, std::int64_t w) const;

  int stage_heads(std::size_t stage) const;
  // 7 when the map allows it, else 3, else 1.
  static int stage_window(std::int64_t h, std::int64_t w);
};

// Backbone outputs as tensors.
template <typename T>
struct FeaturePyramid {
  std::array<Tensor<T>, 4> stages;
  Tensor<T> low_level;
};

template <typename T>
struct StemParams {
  Conv2d<T> conv1;  // 3×3 stride 2
  LayerNorm<T> norm1;
  Conv2d<T> conv2;  // 3×3 stride 2
  LayerNorm<T> norm2;

  template <typename F>
  void visit(const std::string& name, F&& f) {
    conv1.visit(name + ".conv1", f);
    norm1.visit(name + ".norm1", f);
    conv2.visit(name + ".conv2", f);
    norm2.visit(name + ".norm2", f);
  }
};

// 1×1 reduce -> 3×3 -> 1×1 expand, each normalized; projection shortcut
// when widths differ.
template <typename T>
struct BottleneckParams {
  Conv2d<T> reduce;
  LayerNorm<T> norm1;
  Conv2d<T> conv;
  LayerNorm<T> norm2;
  Conv2d<T> expand;
  LayerNorm<T> norm3;
  bool has_shortcut = false;
  Conv2d<T> shortcut;

  template <typename F>
  void visit(const std::string& name, F&& f) {
    reduce.visit(name + ".reduce", f);
    norm1.visit(name + ".norm1", f);
    conv.visit(name + ".conv", f);
    norm2.visit(name + ".norm2", f);
    expand.visit(name + ".expand", f);
    norm3.visit(name + ".norm3", f);
    if (has_shortcut) shortcut.visit(name + ".shortcut", f);
  }
};

// Pre-norm residual pair: attention then MLP.
template <typename T>
struct NABlockParams {
  LayerNorm<T> norm1;
  NeighborhoodAttention<T> attn;
  LayerNorm<T> norm2;
  Mlp<T> mlp;

  void zero_sublayer_outputs() {
    for (Linear<T>* l : {&attn.proj.output, &mlp.fc2}) {
      l->weight = Tensor<T>(l->weight.shape());
      l->bias = Tensor<T>(l->bias.shape());
    }
  }

  template <typename F>
  void visit(const std::string& name, F&& f) {
    norm1.visit(name + ".norm1", f);
    attn.visit(name + ".attn", f);
    norm2.visit(name + ".norm2", f);
    mlp.visit(name + ".mlp", f);
  }
};

template <typename T>
struct StageParams {
  bool has_entry = false;  // stage 1 skips it when widths already match
  Conv2d<T> entry;         // 3×3 stride 2 (stages 2-4) or 1×1 width change (stage 1)
  std::vector<NABlockParams<T>> blocks;

  template <typename F>
  void visit(const std::string& name, F&& f) {
    if (has_entry) entry.visit(name + ".entry", f);
    for (std::size_t i = 0; i < blocks.size(); ++i) blocks[i].visit(name + ".block" + std::to_string(i + 1), f);
  }
};

template <typename T>
struct BackboneParams {
  BackboneConfig config;
  StemParams<T> stem;
  BottleneckParams<T> bottleneck;
  std::array<StageParams<T>, 4> stages;

  // Attention windows depend on the stage resolution, so the input size
  // is part of the parameter layout.
  static BackboneParams init(const BackboneConfig& cfg, std::int64_t input_h, std::int64_t input_w, Rng& rng);

  template <typename F>
  void visit(const std::string& name, F&& f) {
    stem.visit(name + ".stem", f);
    bottleneck.visit(name + ".bottleneck", f);
    for (std::size_t i = 0; i < stages.size(); ++i) stages[i].visit(name + ".stage" + std::to_string(i + 1), f);
  }
};

template <typename T>
NodeId stem_forward(Graph<T>& g, NodeId image, const StemParams<T>& p);

template <typename T>
NodeId bottleneck_forward(Graph<T>& g, NodeId x, const BottleneckParams<T>& p);

template <typename T>
NodeId stage_forward(Graph<T>& g, NodeId x, const StageParams<T>& p);

template <typename T>
PyramidNodes backbone_forward(Graph<T>& g, NodeId image, const BackboneParams<T>& p);

template <typename T>
FeaturePyramid<T> backbone_forward(const Tensor<T>& image, const BackboneParams<T>& p);

}  // namespace wtpose
