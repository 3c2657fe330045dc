#pragma once

#include <span>
#include <vector>

#include "wtpose/tensor.hpp"

// Eager forward/backward kernels. Backward kernels accumulate (+=) into the
// gradient spans they are given; an empty span means "not needed".
namespace wtpose::ops {

inline constexpr double kGeluC0 = 0.7978845608;
inline constexpr double kGeluC1 = 0.044715;
inline constexpr double kLayerNormEps = 1e-5;

// Cross-correlation plus bias over NCHW input and OIHW weights. Each output
// element sums its taps in row-major order over (c, kh, kw), then adds bias.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b, int stride, int padding);

template <typename T>
void conv2d_backward(const Tensor<T>& x, const Tensor<T>& w, std::span<const T> gout, int stride, int padding,
                     std::span<T> gx, std::span<T> gw, std::span<T> gb);

// Output extent of a convolution/pooling window along one axis, rounded
// down; throws ConfigError when the window does not fit at all.
std::int64_t conv_out_extent(std::int64_t in, int kernel, int stride, int padding);

// Half-pixel (align_corners=false) bilinear resize, upsampling only.
template <typename T>
Tensor<T> bilinear_upsample(const Tensor<T>& x, std::int64_t out_h, std::int64_t out_w);

template <typename T>
void bilinear_upsample_backward(const Shape& in_shape, std::span<const T> gout, std::int64_t out_h, std::int64_t out_w,
                                std::span<T> gx);

// Normalizes across channels independently at every (n, h, w).
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, double eps = kLayerNormEps);

template <typename T>
void layer_norm_backward(const Tensor<T>& x, const Tensor<T>& gamma, std::span<const T> gout, double eps,
                         std::span<T> gx, std::span<T> ggamma, std::span<T> gbeta);

template <typename T>
Tensor<T> softmax_lastdim(const Tensor<T>& x);

template <typename T>
void softmax_lastdim_backward(const Tensor<T>& y, std::span<const T> gout, std::span<T> gx);

template <typename T>
Tensor<T> concat_channels(std::span<const Tensor<T>* const> xs);

template <typename T>
Tensor<T> concat_channels(const std::vector<Tensor<T>>& xs);

// Copies channels [first, first + count) out of x.
template <typename T>
Tensor<T> slice_channels(const Tensor<T>& x, std::int64_t first, std::int64_t count);

// Per-channel k×k mean; padded taps are excluded from the divisor.
template <typename T>
Tensor<T> depthwise_avg_pool(const Tensor<T>& x, int k, int stride, int padding);

template <typename T>
void depthwise_avg_pool_backward(const Shape& in_shape, std::span<const T> gout, int k, int stride, int padding,
                                 std::span<T> gx);

template <typename T>
T gelu(T x);

template <typename T>
T gelu_derivative(T x);

template <typename T>
Tensor<T> gelu(const Tensor<T>& x);

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);

// Per-pixel linear map: w is [O, C], b is [O].
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b);

// Per-pixel two-layer perceptron C -> ratio*C -> C with GELU in between.
template <typename T>
Tensor<T> mlp_forward(const Tensor<T>& x, const Tensor<T>& w1, const Tensor<T>& b1, const Tensor<T>& w2,
                      const Tensor<T>& b2, int ratio);

}  // namespace wtpose::ops
