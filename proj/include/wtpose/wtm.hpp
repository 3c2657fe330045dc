#pragma once

#include <array>
#include <string>
#include <utility>

#include "wtpose/attention.hpp"
#include "wtpose/layers.hpp"

namespace wtpose {

// Backbone outputs: four stages at strides 4/8/16/32 plus the stride-4
// low-level features, as graph nodes.
struct PyramidNodes {
  std::array<NodeId, 4> stages{};
  NodeId low_level = 0;
};

struct DilationPair {
  int dilated = 1;
  int local = 1;
};

struct WTMConfig {
  int channels = 128;
  std::array<DilationPair, 4> blocks{{{2, 1}, {4, 1}, {4, 1}, {8, 1}}};
  int window = 7;
  // Per-block window of the dilated layer; 0 means `window`. Lets small maps
  // keep the full window where the dilation allows it.
  std::array<int, 4> dilated_windows{};
  int heads = 8;
  int mlp_ratio = 4;
  int dwp_kernel = 3;
  int low_level_channels = 128;  // width f_LLF is reduced to before merging
  int out_channels = 128;

  NAConfig dilated_attention(std::size_t block) const {
    const int k = dilated_windows.at(block) > 0 ? dilated_windows[block] : window;
    return {k, blocks.at(block).dilated, heads, channels};
  }
  NAConfig local_attention(std::size_t block) const { return {window, blocks.at(block).local, heads, channels}; }

  void validate() const;
  // Validates every attention layer against the stage-1 map size.
  void validate_for(std::int64_t h, std::int64_t w) const;

  // Copy whose dilated windows are the largest odd sizes <= window that fit
  // an h×w map.
  WTMConfig fitted_to(std::int64_t h, std::int64_t w) const;
};

// One waterfall transformer block: dilated attention + MLP, then local
// attention + MLP, each sublayer pre-normalized and residual.
template <typename T>
struct WTBParams {
  NeighborhoodAttention<T> dilated;
  NeighborhoodAttention<T> local;
  std::array<LayerNorm<T>, 4> norms;
  Mlp<T> mlp_dilated;
  Mlp<T> mlp_local;

  static WTBParams init(const WTMConfig& cfg, std::size_t block, Rng& rng) {
    return {NeighborhoodAttention<T>::init(cfg.dilated_attention(block), rng),
            NeighborhoodAttention<T>::init(cfg.local_attention(block), rng),
            {LayerNorm<T>::init(cfg.channels), LayerNorm<T>::init(cfg.channels), LayerNorm<T>::init(cfg.channels),
             LayerNorm<T>::init(cfg.channels)},
            Mlp<T>::init(cfg.channels, cfg.mlp_ratio, rng),
            Mlp<T>::init(cfg.channels, cfg.mlp_ratio, rng)};
  }

  // Zeroes the last projection of every sublayer, making the block the identity.
  void zero_sublayer_outputs() {
    for (Linear<T>* l : {&dilated.proj.output, &local.proj.output, &mlp_dilated.fc2, &mlp_local.fc2}) {
      l->weight = Tensor<T>(l->weight.shape());
      l->bias = Tensor<T>(l->bias.shape());
    }
  }

  template <typename F>
  void visit(const std::string& name, F&& f) {
    dilated.visit(name + ".attn_dilated", f);
    local.visit(name + ".attn_local", f);
    for (std::size_t i = 0; i < norms.size(); ++i) norms[i].visit(name + ".norm" + std::to_string(i + 1), f);
    mlp_dilated.visit(name + ".mlp_dilated", f);
    mlp_local.visit(name + ".mlp_local", f);
  }
};

template <typename T>
struct WTMParams {
  WTMConfig config;
  Conv2d<T> reduce;  // 1×1, g0 -> channels
  std::array<WTBParams<T>, 4> blocks;
  Conv2d<T> fuse;               // 1×1, 4·channels + C(g0) -> channels
  Conv2d<T> low_level_reduce;   // 1×1, C(f_LLF) -> low_level_channels
  Conv2d<T> merge1;             // 3×3, channels + low_level_channels -> out_channels
  Conv2d<T> merge2;             // 3×3, out_channels -> out_channels

  static WTMParams init(const WTMConfig& cfg, std::int64_t pyramid_channels, std::int64_t llf_channels, Rng& rng);

  void zero_sublayer_outputs() {
    for (auto& b : blocks) b.zero_sublayer_outputs();
  }

  template <typename F>
  void visit(const std::string& name, F&& f) {
    reduce.visit(name + ".reduce", f);
    for (std::size_t i = 0; i < blocks.size(); ++i) blocks[i].visit(name + ".wtb" + std::to_string(i + 1), f);
    fuse.visit(name + ".fuse", f);
    low_level_reduce.visit(name + ".llf_reduce", f);
    merge1.visit(name + ".merge1", f);
    merge2.visit(name + ".merge2", f);
  }
};

// Upsamples stages 2-4 bilinearly to the stage-1 size and concatenates
// f1, f2, f3, f4 along channels. Requires an exact 2× size ladder.
template <typename T>
NodeId fuse_pyramid(Graph<T>& g, const std::array<NodeId, 4>& stages);

template <typename T>
NodeId reduce_channels(Graph<T>& g, NodeId g0, const WTMParams<T>& p);

template <typename T>
NodeId wtb_forward(Graph<T>& g, NodeId z, const WTBParams<T>& p);

struct WaterfallNodes {
  std::array<NodeId, 4> branches{};
  NodeId pooled = 0;
  NodeId output = 0;
};

// Cascade z_i = WTB_i(z_{i-1}); concat [z1..z4, DWP(g0)]; 1×1 conv.
template <typename T>
WaterfallNodes waterfall_forward(Graph<T>& g, NodeId z0, NodeId g0, const WTMParams<T>& p);

// 1×1 reduce of f_LLF, concat after f_Waterfall, then two 3×3 convs.
template <typename T>
NodeId merge_low_level(Graph<T>& g, NodeId waterfall, NodeId low_level, const WTMParams<T>& p);

template <typename T>
NodeId wtm_forward(Graph<T>& g, const PyramidNodes& pyramid, const WTMParams<T>& p);

// Eager conveniences (no gradient tracking).
template <typename T>
Tensor<T> wtb_forward(const Tensor<T>& z, const WTBParams<T>& p);

template <typename T>
Tensor<T> fuse_pyramid(const std::array<Tensor<T>, 4>& stages);

}  // namespace wtpose
