#pragma once

#include <span>
#include <vector>

#include "wtpose/graph.hpp"
#include "wtpose/ops.hpp"

// Differentiable wrappers: each records one node whose backward calls the
// matching ops:: kernel.
namespace wtpose::ad {

template <typename T>
NodeId conv2d(Graph<T>& g, NodeId x, NodeId w, NodeId b, int stride, int padding);

// Per-pixel linear map with w [O, C].
template <typename T>
NodeId linear(Graph<T>& g, NodeId x, NodeId w, NodeId b);

template <typename T>
NodeId bilinear_upsample(Graph<T>& g, NodeId x, std::int64_t out_h, std::int64_t out_w);

template <typename T>
NodeId layer_norm(Graph<T>& g, NodeId x, NodeId gamma, NodeId beta, double eps = ops::kLayerNormEps);

template <typename T>
NodeId softmax_lastdim(Graph<T>& g, NodeId x);

template <typename T>
NodeId concat_channels(Graph<T>& g, std::span<const NodeId> xs);

template <typename T>
NodeId depthwise_avg_pool(Graph<T>& g, NodeId x, int k, int stride, int padding);

template <typename T>
NodeId gelu(Graph<T>& g, NodeId x);

template <typename T>
NodeId add(Graph<T>& g, NodeId a, NodeId b);

// Scalar reductions used as losses.
template <typename T>
NodeId sum(Graph<T>& g, NodeId x);

// sum(x ⊙ x) / 2
template <typename T>
NodeId half_sum_squares(Graph<T>& g, NodeId x);

// sum(x ⊙ weights) for a fixed weight tensor of the same shape.
template <typename T>
NodeId weighted_sum(Graph<T>& g, NodeId x, Tensor<T> weights);

// Mean squared error over the maps whose mask entry is 1. pred/target are
// [N, K, H, W], mask is [N, K]. Returns 0 when nothing is visible.
template <typename T>
NodeId mse_loss_visible(Graph<T>& g, NodeId pred, const Tensor<T>& target, const Tensor<T>& mask);

// linear -> GELU -> linear, per pixel.
template <typename T>
NodeId mlp(Graph<T>& g, NodeId x, NodeId w1, NodeId b1, NodeId w2, NodeId b2);

}  // namespace wtpose::ad
