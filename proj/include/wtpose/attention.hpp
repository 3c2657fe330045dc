#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "wtpose/graph.hpp"
#include "wtpose/layers.hpp"

namespace wtpose {

// Window, dilation and head layout of one neighborhood-attention layer.
struct NAConfig {
  int window = 7;
  int dilation = 1;
  int heads = 8;
  int channels = 128;

  int head_dim() const { return channels / heads; }

  // Checks the map-independent invariants.
  void validate() const;

  // Also checks that an h×w map holds a full k-tap grid for every residue
  // class mod dilation along both axes (extent >= window * dilation).
  void validate_for(std::int64_t h, std::int64_t w) const;
};

// Spatial extent covered by one layer: dilation * (window - 1) + 1.
std::int64_t receptive_field(int window, int dilation);

// First tap of the window along one axis for position p. The window is
// centred on p when it fits and otherwise slid, in steps of `dilation`, until
// all taps are in bounds; it always stays in p's residue class.
std::int64_t window_start(std::int64_t length, int window, int dilation, std::int64_t p);

using Pixel = std::array<std::int64_t, 2>;  // (row, col)

// The window² neighbours of p in row-major tap order.
std::vector<Pixel> neighborhood_indices(std::int64_t h, std::int64_t w, int window, int dilation, Pixel p);

// Q/K/V/output projections, each a per-pixel C×C linear map.
template <typename T>
struct AttentionProjections {
  Linear<T> query;
  Linear<T> key;
  Linear<T> value;
  Linear<T> output;

  static AttentionProjections init(std::int64_t channels, Rng& rng) {
    return {Linear<T>::init(channels, channels, rng), Linear<T>::init(channels, channels, rng),
            Linear<T>::init(channels, channels, rng), Linear<T>::init(channels, channels, rng)};
  }

  template <typename F>
  void visit(const std::string& name, F&& f) {
    query.visit(name + ".query", f);
    key.visit(name + ".key", f);
    value.visit(name + ".value", f);
    output.visit(name + ".output", f);
  }
};

// Learnable bias indexed by (head, Δrow/δ + k − 1, Δcol/δ + k − 1).
template <typename T>
struct RelPosBias {
  Tensor<T> table;

  static RelPosBias zeros(int heads, int window) {
    return {Tensor<T>({heads, 2 * window - 1, 2 * window - 1})};
  }

  template <typename F>
  void visit(const std::string& name, F&& f) {
    f(name + ".table", table);
  }
};

template <typename T>
struct NeighborhoodAttention {
  NAConfig config;
  AttentionProjections<T> proj;
  RelPosBias<T> bias;

  static NeighborhoodAttention init(const NAConfig& cfg, Rng& rng) {
    cfg.validate();
    return {cfg, AttentionProjections<T>::init(cfg.channels, rng), RelPosBias<T>::zeros(cfg.heads, cfg.window)};
  }

  template <typename F>
  void visit(const std::string& name, F&& f) {
    proj.visit(name, f);
    bias.visit(name + ".rpb", f);
  }
};

// Attention core on already-projected q, k, v ([N, C, H, W]) plus the
// relative-position table; returns the per-head weighted value sums.
template <typename T>
NodeId neighborhood_attention_core(Graph<T>& g, NodeId q, NodeId k, NodeId v, NodeId rpb, const NAConfig& cfg);

// Full multi-head layer: projections, core, output projection.
template <typename T>
NodeId na_forward(Graph<T>& g, NodeId x, const NeighborhoodAttention<T>& layer);

template <typename T>
Tensor<T> na_forward(const Tensor<T>& x, const NAConfig& cfg, const AttentionProjections<T>& proj,
                     const RelPosBias<T>& bias);

// Softmax weights of every (n, head, row, col) over its window² taps, shaped
// [N, heads, H, W, window²].
template <typename T>
Tensor<T> na_attention_weights(const Tensor<T>& x, const NAConfig& cfg, const AttentionProjections<T>& proj,
                               const RelPosBias<T>& bias);

}  // namespace wtpose
