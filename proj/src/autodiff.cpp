#include "wtpose/autodiff.hpp"

#include <memory>
#include <string>

namespace wtpose::ad {

template <typename T>
NodeId conv2d(Graph<T>& g, NodeId x, NodeId w, NodeId b, int stride, int padding) {
  Tensor<T> out = ops::conv2d(g.value(x), g.value(w), g.value(b), stride, padding);
  return g.record("conv2d", {x, w, b}, std::move(out), [x, w, b, stride, padding](Graph<T>& gr, NodeId self) {
    ops::conv2d_backward(gr.value(x), gr.value(w), gr.grad_out(self), stride, padding, gr.grad_sink(x),
                         gr.grad_sink(w), gr.grad_sink(b));
  });
}

template <typename T>
NodeId linear(Graph<T>& g, NodeId x, NodeId w, NodeId b) {
  const Tensor<T>& wv = g.value(w);
  require_rank(wv, 2, "linear weight");
  const Shape kernel{wv.dim(0), wv.dim(1), 1, 1};
  Tensor<T> out = ops::linear(g.value(x), wv, g.value(b));
  return g.record("linear", {x, w, b}, std::move(out), [x, w, b, kernel](Graph<T>& gr, NodeId self) {
    // A [O, C] matrix has the same memory layout as a [O, C, 1, 1] kernel.
    const Tensor<T> k = gr.value(w).reshaped(kernel);
    ops::conv2d_backward(gr.value(x), k, gr.grad_out(self), 1, 0, gr.grad_sink(x), gr.grad_sink(w), gr.grad_sink(b));
  });
}

template <typename T>
NodeId bilinear_upsample(Graph<T>& g, NodeId x, std::int64_t out_h, std::int64_t out_w) {
  Tensor<T> out = ops::bilinear_upsample(g.value(x), out_h, out_w);
  return g.record("bilinear_upsample", {x}, std::move(out), [x, out_h, out_w](Graph<T>& gr, NodeId self) {
    ops::bilinear_upsample_backward(gr.value(x).shape(), gr.grad_out(self), out_h, out_w, gr.grad_sink(x));
  });
}

template <typename T>
NodeId layer_norm(Graph<T>& g, NodeId x, NodeId gamma, NodeId beta, double eps) {
  Tensor<T> out = ops::layer_norm(g.value(x), g.value(gamma), g.value(beta), eps);
  return g.record("layer_norm", {x, gamma, beta}, std::move(out), [x, gamma, beta, eps](Graph<T>& gr, NodeId self) {
    ops::layer_norm_backward(gr.value(x), gr.value(gamma), gr.grad_out(self), eps, gr.grad_sink(x),
                             gr.grad_sink(gamma), gr.grad_sink(beta));
  });
}

template <typename T>
NodeId softmax_lastdim(Graph<T>& g, NodeId x) {
  Tensor<T> out = ops::softmax_lastdim(g.value(x));
  return g.record("softmax_lastdim", {x}, std::move(out), [x](Graph<T>& gr, NodeId self) {
    ops::softmax_lastdim_backward(gr.value(self), gr.grad_out(self), gr.grad_sink(x));
  });
}

template <typename T>
NodeId concat_channels(Graph<T>& g, std::span<const NodeId> xs) {
  std::vector<const Tensor<T>*> parts;
  for (NodeId id : xs) parts.push_back(&g.value(id));
  Tensor<T> out = ops::concat_channels<T>(std::span<const Tensor<T>* const>(parts));
  std::vector<NodeId> inputs(xs.begin(), xs.end());
  return g.record("concat_channels", inputs, std::move(out), [inputs](Graph<T>& gr, NodeId self) {
    const Tensor<T>& y = gr.value(self);
    const std::int64_t n = y.dim(0), total = y.dim(1), plane = y.dim(2) * y.dim(3);
    auto gy = gr.grad_out(self);
    std::int64_t offset = 0;
    for (NodeId in : inputs) {
      const std::int64_t c = gr.value(in).dim(1);
      auto gx = gr.grad_sink(in);
      if (!gx.empty()) {
        for (std::int64_t b = 0; b < n; ++b) {
          const T* src = gy.data() + (b * total + offset) * plane;
          T* dst = gx.data() + b * c * plane;
          for (std::int64_t i = 0; i < c * plane; ++i) dst[i] += src[i];
        }
      }
      offset += c;
    }
  });
}

template <typename T>
NodeId depthwise_avg_pool(Graph<T>& g, NodeId x, int k, int stride, int padding) {
  Tensor<T> out = ops::depthwise_avg_pool(g.value(x), k, stride, padding);
  return g.record("depthwise_avg_pool", {x}, std::move(out), [x, k, stride, padding](Graph<T>& gr, NodeId self) {
    ops::depthwise_avg_pool_backward(gr.value(x).shape(), gr.grad_out(self), k, stride, padding, gr.grad_sink(x));
  });
}

template <typename T>
NodeId gelu(Graph<T>& g, NodeId x) {
  Tensor<T> out = ops::gelu(g.value(x));
  return g.record("gelu", {x}, std::move(out), [x](Graph<T>& gr, NodeId self) {
    const Tensor<T>& xv = gr.value(x);
    auto gy = gr.grad_out(self);
    auto gx = gr.grad_sink(x);
    for (std::size_t i = 0; i < xv.numel(); ++i) gx[i] += gy[i] * ops::gelu_derivative(xv[i]);
  });
}

template <typename T>
NodeId add(Graph<T>& g, NodeId a, NodeId b) {
  Tensor<T> out = ops::add(g.value(a), g.value(b));
  return g.record("add", {a, b}, std::move(out), [a, b](Graph<T>& gr, NodeId self) {
    auto gy = gr.grad_out(self);
    for (NodeId in : {a, b}) {
      auto gx = gr.grad_sink(in);
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gy[i];
    }
  });
}

template <typename T>
NodeId sum(Graph<T>& g, NodeId x) {
  T acc = T(0);
  for (T v : g.value(x).values()) acc += v;
  return g.record("sum", {x}, Tensor<T>({1}, acc), [x](Graph<T>& gr, NodeId self) {
    const T gy = gr.grad_out(self)[0];
    for (T& v : gr.grad_sink(x)) v += gy;
  });
}

template <typename T>
NodeId half_sum_squares(Graph<T>& g, NodeId x) {
  T acc = T(0);
  for (T v : g.value(x).values()) acc += v * v;
  return g.record("half_sum_squares", {x}, Tensor<T>({1}, acc / T(2)), [x](Graph<T>& gr, NodeId self) {
    const T gy = gr.grad_out(self)[0];
    const Tensor<T>& xv = gr.value(x);
    auto gx = gr.grad_sink(x);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gy * xv[i];
  });
}

template <typename T>
NodeId weighted_sum(Graph<T>& g, NodeId x, Tensor<T> weights) {
  const Tensor<T>& xv = g.value(x);
  if (weights.shape() != xv.shape()) {
    throw DimensionError("weighted_sum: weights " + to_string(weights.shape()) + " vs input " + to_string(xv.shape()));
  }
  T acc = T(0);
  for (std::size_t i = 0; i < xv.numel(); ++i) acc += xv[i] * weights[i];
  auto wp = std::make_shared<const Tensor<T>>(std::move(weights));
  return g.record("weighted_sum", {x}, Tensor<T>({1}, acc), [x, wp](Graph<T>& gr, NodeId self) {
    const T gy = gr.grad_out(self)[0];
    auto gx = gr.grad_sink(x);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gy * (*wp)[i];
  });
}

template <typename T>
NodeId mse_loss_visible(Graph<T>& g, NodeId pred, const Tensor<T>& target, const Tensor<T>& mask) {
  const Tensor<T>& p = g.value(pred);
  require_rank(p, 4, "mse_loss_visible prediction");
  if (target.shape() != p.shape()) {
    throw DimensionError("mse_loss_visible: target " + to_string(target.shape()) + " vs prediction " +
                         to_string(p.shape()));
  }
  const std::int64_t maps = p.dim(0) * p.dim(1), cells = p.dim(2) * p.dim(3);
  if (static_cast<std::int64_t>(mask.numel()) != maps) {
    throw DimensionError("mse_loss_visible: mask must have N*K entries");
  }
  std::int64_t visible = 0;
  for (T m : mask.values()) visible += (m != T(0)) ? 1 : 0;
  T acc = T(0);
  for (std::int64_t m = 0; m < maps; ++m) {
    if (mask[static_cast<std::size_t>(m)] == T(0)) continue;
    const T* pr = p.data() + m * cells;
    const T* tr = target.data() + m * cells;
    for (std::int64_t i = 0; i < cells; ++i) {
      const T d = pr[i] - tr[i];
      acc += d * d;
    }
  }
  const T denom = static_cast<T>(visible * cells);
  const T loss = visible ? acc / denom : T(0);
  auto tp = std::make_shared<const Tensor<T>>(target);
  auto mp = std::make_shared<const Tensor<T>>(mask);
  return g.record("mse_loss_visible", {pred}, Tensor<T>({1}, loss),
                  [pred, tp, mp, maps, cells, denom, visible](Graph<T>& gr, NodeId self) {
                    if (!visible) return;
                    const T scale = T(2) * gr.grad_out(self)[0] / denom;
                    const Tensor<T>& pv = gr.value(pred);
                    auto gx = gr.grad_sink(pred);
                    for (std::int64_t m = 0; m < maps; ++m) {
                      if ((*mp)[static_cast<std::size_t>(m)] == T(0)) continue;
                      for (std::int64_t i = m * cells; i < (m + 1) * cells; ++i) {
                        const auto u = static_cast<std::size_t>(i);
                        gx[u] += scale * (pv[u] - (*tp)[u]);
                      }
                    }
                  });
}

template <typename T>
NodeId mlp(Graph<T>& g, NodeId x, NodeId w1, NodeId b1, NodeId w2, NodeId b2) {
  return linear(g, gelu(g, linear(g, x, w1, b1)), w2, b2);
}

#define WTPOSE_INSTANTIATE_AD(T)                                                            \
  template NodeId conv2d(Graph<T>&, NodeId, NodeId, NodeId, int, int);                      \
  template NodeId linear(Graph<T>&, NodeId, NodeId, NodeId);                                \
  template NodeId bilinear_upsample(Graph<T>&, NodeId, std::int64_t, std::int64_t);         \
  template NodeId layer_norm(Graph<T>&, NodeId, NodeId, NodeId, double);                    \
  template NodeId softmax_lastdim(Graph<T>&, NodeId);                                       \
  template NodeId concat_channels(Graph<T>&, std::span<const NodeId>);                      \
  template NodeId depthwise_avg_pool(Graph<T>&, NodeId, int, int, int);                     \
  template NodeId gelu(Graph<T>&, NodeId);                                                  \
  template NodeId add(Graph<T>&, NodeId, NodeId);                                           \
  template NodeId sum(Graph<T>&, NodeId);                                                   \
  template NodeId half_sum_squares(Graph<T>&, NodeId);                                      \
  template NodeId weighted_sum(Graph<T>&, NodeId, Tensor<T>);                               \
  template NodeId mse_loss_visible(Graph<T>&, NodeId, const Tensor<T>&, const Tensor<T>&); \
  template NodeId mlp(Graph<T>&, NodeId, NodeId, NodeId, NodeId, NodeId);

WTPOSE_INSTANTIATE_AD(float)
WTPOSE_INSTANTIATE_AD(double)

}  // namespace wtpose::ad
