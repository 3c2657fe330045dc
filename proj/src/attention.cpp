#include "wtpose/attention.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>

namespace wtpose {

void NAConfig::validate() const {
  if (window <= 0 || window % 2 == 0) throw ConfigError("attention window must be odd and positive");
  if (dilation < 1) throw ConfigError("attention dilation must be >= 1");
  if (heads < 1) throw ConfigError("attention head count must be >= 1");
  if (channels < 1 || channels % heads != 0) {
    throw ConfigError("attention channels (" + std::to_string(channels) + ") must be divisible by heads (" +
                      std::to_string(heads) + ")");
  }
}

void NAConfig::validate_for(std::int64_t h, std::int64_t w) const {
  validate();
  const std::int64_t need = static_cast<std::int64_t>(window) * dilation;
  if (h < need || w < need) {
    throw ConfigError("feature map " + std::to_string(h) + "x" + std::to_string(w) + " is too small for window " +
                      std::to_string(window) + " at dilation " + std::to_string(dilation) + " (needs >= " +
                      std::to_string(need) + " per axis)");
  }
}

std::int64_t receptive_field(int window, int dilation) {
  return static_cast<std::int64_t>(dilation) * (window - 1) + 1;
}

std::int64_t window_start(std::int64_t length, int window, int dilation, std::int64_t p) {
  const std::int64_t residue = p % dilation;
  const std::int64_t index = p / dilation;
  const std::int64_t members = (length - 1 - residue) / dilation + 1;
  const std::int64_t first = std::clamp<std::int64_t>(index - window / 2, 0, members - window);
  return residue + first * dilation;
}

std::vector<Pixel> neighborhood_indices(std::int64_t h, std::int64_t w, int window, int dilation, Pixel p) {
  NAConfig{window, dilation, 1, 1}.validate_for(h, w);
  if (p[0] < 0 || p[0] >= h || p[1] < 0 || p[1] >= w) throw DimensionError("neighborhood_indices: pixel out of map");
  const std::int64_t r0 = window_start(h, window, dilation, p[0]);
  const std::int64_t c0 = window_start(w, window, dilation, p[1]);
  std::vector<Pixel> out;
  out.reserve(static_cast<std::size_t>(window * window));
  for (int a = 0; a < window; ++a) {
    for (int b = 0; b < window; ++b) out.push_back({r0 + a * dilation, c0 + b * dilation});
  }
  return out;
}

namespace {

// [N, C, P] -> [N, P, C]
template <typename T>
std::vector<T> to_channels_last(const T* src, std::int64_t n, std::int64_t c, std::int64_t plane) {
  std::vector<T> out(static_cast<std::size_t>(n * c * plane));
  for (std::int64_t b = 0; b < n; ++b) {
    for (std::int64_t ch = 0; ch < c; ++ch) {
      const T* s = src + (b * c + ch) * plane;
      T* d = out.data() + b * plane * c + ch;
      for (std::int64_t p = 0; p < plane; ++p) d[p * c] = s[p];
    }
  }
  return out;
}

// dots[t] = sum over e of q[e] * rows[t][e], e ascending. Four taps at a time
// so the reductions overlap.
template <typename T>
void tap_dots(const T* q, const T* const* rows, int taps, int n, T* dots) {
  int t = 0;
  for (; t + 4 <= taps; t += 4) {
    const T *r0 = rows[t], *r1 = rows[t + 1], *r2 = rows[t + 2], *r3 = rows[t + 3];
    T a0 = T(0), a1 = T(0), a2 = T(0), a3 = T(0);
    for (int e = 0; e < n; ++e) {
      a0 += q[e] * r0[e];
      a1 += q[e] * r1[e];
      a2 += q[e] * r2[e];
      a3 += q[e] * r3[e];
    }
    dots[t] = a0;
    dots[t + 1] = a1;
    dots[t + 2] = a2;
    dots[t + 3] = a3;
  }
  for (; t < taps; ++t) {
    T a = T(0);
    for (int e = 0; e < n; ++e) a += q[e] * rows[t][e];
    dots[t] = a;
  }
}

// Adds [N, P, C] into [N, C, P].
template <typename T>
void add_channels_first(const std::vector<T>& src, std::int64_t n, std::int64_t c, std::int64_t plane, T* dst) {
  for (std::int64_t b = 0; b < n; ++b) {
    for (std::int64_t ch = 0; ch < c; ++ch) {
      T* d = dst + (b * c + ch) * plane;
      const T* s = src.data() + b * plane * c + ch;
      for (std::int64_t p = 0; p < plane; ++p) d[p] += s[p * c];
    }
  }
}

struct Layout {
  std::int64_t n, c, h, w, plane;
  int k, d, heads, hd, taps;
  std::vector<std::int64_t> row_start, col_start;

  // key positions in the plane and head-free bias offsets for every tap of pixel (i, j)
  void pixel_taps(std::int64_t i, std::int64_t j, std::int64_t* pos, std::int64_t* bias) const {
    const std::int64_t span = 2 * k - 1;
    const std::int64_t r0 = row_start[i], c0 = col_start[j];
    const std::int64_t ri0 = (r0 - i) / d + k - 1, rj0 = (c0 - j) / d + k - 1;
    int t = 0;
    for (int a = 0; a < k; ++a)
      for (int b = 0; b < k; ++b, ++t) {
        pos[t] = (r0 + a * d) * w + c0 + b * d;
        bias[t] = (ri0 + a) * span + rj0 + b;
      }
  }
};

template <typename T>
Layout make_layout(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v, const Tensor<T>& rpb,
                   const NAConfig& cfg) {
  require_rank(q, 4, "attention query");
  if (k.shape() != q.shape() || v.shape() != q.shape()) {
    throw DimensionError("attention: q/k/v shapes differ: " + to_string(q.shape()) + ", " + to_string(k.shape()) +
                         ", " + to_string(v.shape()));
  }
  if (q.dim(1) != cfg.channels) {
    throw DimensionError("attention: input has " + std::to_string(q.dim(1)) + " channels, config expects " +
                         std::to_string(cfg.channels));
  }
  cfg.validate_for(q.dim(2), q.dim(3));
  const Shape table{cfg.heads, 2 * cfg.window - 1, 2 * cfg.window - 1};
  if (rpb.shape() != table) {
    throw DimensionError("attention: bias table " + to_string(rpb.shape()) + ", expected " + to_string(table));
  }
  Layout l{q.dim(0), q.dim(1), q.dim(2), q.dim(3), q.dim(2) * q.dim(3),
           cfg.window, cfg.dilation, cfg.heads, cfg.head_dim(), cfg.window * cfg.window, {}, {}};
  for (std::int64_t i = 0; i < l.h; ++i) l.row_start.push_back(window_start(l.h, l.k, l.d, i));
  for (std::int64_t j = 0; j < l.w; ++j) l.col_start.push_back(window_start(l.w, l.k, l.d, j));
  return l;
}

// Computes channels-last output and the softmax weights [N, heads, H, W, taps].
template <typename T>
void core_forward(const Layout& l, const std::vector<T>& qt, const std::vector<T>& kt, const std::vector<T>& vt,
                  const Tensor<T>& rpb, std::vector<T>& out_t, std::vector<T>& weights) {
  const T scale = T(1) / std::sqrt(static_cast<T>(l.hd));
  out_t.assign(qt.size(), T(0));
  weights.assign(static_cast<std::size_t>(l.n * l.heads * l.plane * l.taps), T(0));
  std::vector<T> scores(static_cast<std::size_t>(l.taps));
  std::vector<const T*> rows(static_cast<std::size_t>(l.taps));
  std::vector<std::int64_t> pos(static_cast<std::size_t>(l.taps)), bias(static_cast<std::size_t>(l.taps));
  const std::int64_t table = (2 * l.k - 1) * (2 * l.k - 1);
  for (std::int64_t b = 0; b < l.n; ++b) {
    for (std::int64_t i = 0; i < l.h; ++i) {
      for (std::int64_t j = 0; j < l.w; ++j) {
        const std::int64_t p = i * l.w + j;
        l.pixel_taps(i, j, pos.data(), bias.data());
        for (int head = 0; head < l.heads; ++head) {
          const T* qv = qt.data() + (b * l.plane + p) * l.c + head * l.hd;
          const T* hb = rpb.data() + head * table;
          T mx = -std::numeric_limits<T>::infinity();
          for (int t = 0; t < l.taps; ++t) rows[t] = kt.data() + (b * l.plane + pos[t]) * l.c + head * l.hd;
          tap_dots(qv, rows.data(), l.taps, l.hd, scores.data());
          for (int t = 0; t < l.taps; ++t) {
            const T s = scores[t] * scale + hb[bias[t]];
            if (!std::isfinite(s)) throw NumericError("attention: non-finite score");
            scores[t] = s;
            mx = std::max(mx, s);
          }
          T sum = T(0);
          for (int t = 0; t < l.taps; ++t) {
            scores[t] = std::exp(scores[t] - mx);
            sum += scores[t];
          }
          const T inv = T(1) / sum;
          T* wrow = weights.data() + ((b * l.heads + head) * l.plane + p) * l.taps;
          T* ov = out_t.data() + (b * l.plane + p) * l.c + head * l.hd;
          for (int t = 0; t < l.taps; ++t) {
            const T wt = scores[t] * inv;
            wrow[t] = wt;
            const T* vv = vt.data() + (b * l.plane + pos[t]) * l.c + head * l.hd;
            for (int e = 0; e < l.hd; ++e) ov[e] += wt * vv[e];
          }
        }
      }
    }
  }
}

}  // namespace

template <typename T>
NodeId neighborhood_attention_core(Graph<T>& g, NodeId q, NodeId k, NodeId v, NodeId rpb, const NAConfig& cfg) {
  const Tensor<T>& qv = g.value(q);
  const Layout l = make_layout(qv, g.value(k), g.value(v), g.value(rpb), cfg);
  auto qt = std::make_shared<std::vector<T>>(to_channels_last(qv.data(), l.n, l.c, l.plane));
  auto kt = std::make_shared<std::vector<T>>(to_channels_last(g.value(k).data(), l.n, l.c, l.plane));
  auto vt = std::make_shared<std::vector<T>>(to_channels_last(g.value(v).data(), l.n, l.c, l.plane));
  auto weights = std::make_shared<std::vector<T>>();
  std::vector<T> out_t;
  core_forward(l, *qt, *kt, *vt, g.value(rpb), out_t, *weights);
  Tensor<T> out(qv.shape());
  add_channels_first(out_t, l.n, l.c, l.plane, out.data());
  if (!g.grad_enabled()) return g.record("neighborhood_attention", {q, k, v, rpb}, std::move(out), nullptr);

  return g.record(
      "neighborhood_attention", {q, k, v, rpb}, std::move(out),
      [l, q, k, v, rpb, qt, kt, vt, weights](Graph<T>& gr, NodeId self) {
        const T scale = T(1) / std::sqrt(static_cast<T>(l.hd));
        const std::vector<T> gout = to_channels_last(gr.grad_out(self).data(), l.n, l.c, l.plane);
        std::vector<T> gq(qt->size(), T(0)), gk(qt->size(), T(0)), gv(qt->size(), T(0));
        auto grpb = gr.grad_sink(rpb);
        std::vector<T> gw(static_cast<std::size_t>(l.taps));
        std::vector<const T*> rows(static_cast<std::size_t>(l.taps));
        std::vector<std::int64_t> pos(static_cast<std::size_t>(l.taps)), bias(static_cast<std::size_t>(l.taps));
        const std::int64_t table = (2 * l.k - 1) * (2 * l.k - 1);
        for (std::int64_t b = 0; b < l.n; ++b) {
          for (std::int64_t i = 0; i < l.h; ++i) {
            for (std::int64_t j = 0; j < l.w; ++j) {
              const std::int64_t p = i * l.w + j;
              l.pixel_taps(i, j, pos.data(), bias.data());
              for (int head = 0; head < l.heads; ++head) {
                const std::int64_t off = (b * l.plane + p) * l.c + head * l.hd;
                const T* go = gout.data() + off;
                const T* wrow = weights->data() + ((b * l.heads + head) * l.plane + p) * l.taps;
                for (int t = 0; t < l.taps; ++t) {
                  const std::int64_t toff = (b * l.plane + pos[t]) * l.c + head * l.hd;
                  rows[t] = vt->data() + toff;
                  T* gvv = gv.data() + toff;
                  for (int e = 0; e < l.hd; ++e) gvv[e] += wrow[t] * go[e];
                }
                tap_dots(go, rows.data(), l.taps, l.hd, gw.data());
                T dot = T(0);
                for (int t = 0; t < l.taps; ++t) dot += wrow[t] * gw[t];
                const T* qvec = qt->data() + off;
                T* gqv = gq.data() + off;
                for (int t = 0; t < l.taps; ++t) {
                  const T gs = wrow[t] * (gw[t] - dot);
                  const std::int64_t toff = (b * l.plane + pos[t]) * l.c + head * l.hd;
                  const T* kv = kt->data() + toff;
                  T* gkv = gk.data() + toff;
                  const T gss = gs * scale;
                  for (int e = 0; e < l.hd; ++e) {
                    gqv[e] += gss * kv[e];
                    gkv[e] += gss * qvec[e];
                  }
                  if (!grpb.empty()) grpb[static_cast<std::size_t>(head * table + bias[t])] += gs;
                }
              }
            }
          }
        }
        if (auto s = gr.grad_sink(q); !s.empty()) add_channels_first(gq, l.n, l.c, l.plane, s.data());
        if (auto s = gr.grad_sink(k); !s.empty()) add_channels_first(gk, l.n, l.c, l.plane, s.data());
        if (auto s = gr.grad_sink(v); !s.empty()) add_channels_first(gv, l.n, l.c, l.plane, s.data());
      });
}

template <typename T>
NodeId na_forward(Graph<T>& g, NodeId x, const NeighborhoodAttention<T>& layer) {
  const auto& p = layer.proj;
  const NodeId q = p.query.forward(g, x);
  const NodeId k = p.key.forward(g, x);
  const NodeId v = p.value.forward(g, x);
  const NodeId mixed = neighborhood_attention_core(g, q, k, v, g.parameter(layer.bias.table), layer.config);
  return p.output.forward(g, mixed);
}

template <typename T>
Tensor<T> na_forward(const Tensor<T>& x, const NAConfig& cfg, const AttentionProjections<T>& proj,
                     const RelPosBias<T>& bias) {
  Graph<T> g(false);
  const NeighborhoodAttention<T> layer{cfg, proj, bias};
  return g.value(na_forward(g, g.parameter(x), layer));
}

template <typename T>
Tensor<T> na_attention_weights(const Tensor<T>& x, const NAConfig& cfg, const AttentionProjections<T>& proj,
                               const RelPosBias<T>& bias) {
  const Tensor<T> q = ops::linear(x, proj.query.weight, proj.query.bias);
  const Tensor<T> k = ops::linear(x, proj.key.weight, proj.key.bias);
  const Tensor<T> v = ops::linear(x, proj.value.weight, proj.value.bias);
  const Layout l = make_layout(q, k, v, bias.table, cfg);
  std::vector<T> out_t, weights;
  core_forward(l, to_channels_last(q.data(), l.n, l.c, l.plane), to_channels_last(k.data(), l.n, l.c, l.plane),
               to_channels_last(v.data(), l.n, l.c, l.plane), bias.table, out_t, weights);
  return Tensor<T>({l.n, l.heads, l.h, l.w, l.taps}, std::move(weights));
}

#define WTPOSE_INSTANTIATE_NA(T)                                                                                   \
  template NodeId neighborhood_attention_core(Graph<T>&, NodeId, NodeId, NodeId, NodeId, const NAConfig&);          \
  template NodeId na_forward(Graph<T>&, NodeId, const NeighborhoodAttention<T>&);                                 \
  template Tensor<T> na_forward(const Tensor<T>&, const NAConfig&, const AttentionProjections<T>&,                 \
                                const RelPosBias<T>&);                                                             \
  template Tensor<T> na_attention_weights(const Tensor<T>&, const NAConfig&, const AttentionProjections<T>&,       \
                                          const RelPosBias<T>&);

WTPOSE_INSTANTIATE_NA(float)
WTPOSE_INSTANTIATE_NA(double)

}  // namespace wtpose
