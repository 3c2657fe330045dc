#include "wtpose/wtm.hpp"

#include <algorithm>

namespace wtpose {

void WTMConfig::validate() const {
  if (channels < 1 || out_channels < 1 || low_level_channels < 1) throw ConfigError("WTM widths must be positive");
  if (mlp_ratio < 1) throw ConfigError("WTM mlp ratio must be >= 1");
  if (dwp_kernel < 1 || dwp_kernel % 2 == 0) throw ConfigError("WTM pooling kernel must be odd and positive");
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    dilated_attention(b).validate();
    local_attention(b).validate();
  }
}

void WTMConfig::validate_for(std::int64_t h, std::int64_t w) const {
  validate();
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    dilated_attention(b).validate_for(h, w);
    local_attention(b).validate_for(h, w);
  }
}

WTMConfig WTMConfig::fitted_to(std::int64_t h, std::int64_t w) const {
  WTMConfig c = *this;
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    int k = window;
    while (k > 1 && (static_cast<std::int64_t>(k) * blocks[b].dilated > std::min(h, w))) k -= 2;
    c.dilated_windows[b] = k;
  }
  return c;
}

template <typename T>
WTMParams<T> WTMParams<T>::init(const WTMConfig& cfg, std::int64_t pyramid_channels, std::int64_t llf_channels,
                                Rng& rng) {
  cfg.validate();
  WTMParams p;
  p.config = cfg;
  p.reduce = Conv2d<T>::init(pyramid_channels, cfg.channels, 1, 1, 0, rng);
  for (std::size_t b = 0; b < p.blocks.size(); ++b) p.blocks[b] = WTBParams<T>::init(cfg, b, rng);
  p.fuse = Conv2d<T>::init(4 * cfg.channels + pyramid_channels, cfg.channels, 1, 1, 0, rng);
  p.low_level_reduce = Conv2d<T>::init(llf_channels, cfg.low_level_channels, 1, 1, 0, rng);
  p.merge1 = Conv2d<T>::init(cfg.channels + cfg.low_level_channels, cfg.out_channels, 3, 1, 1, rng);
  p.merge2 = Conv2d<T>::init(cfg.out_channels, cfg.out_channels, 3, 1, 1, rng);
  return p;
}

template <typename T>
NodeId fuse_pyramid(Graph<T>& g, const std::array<NodeId, 4>& stages) {
  typename Graph<T>::Scope scope(g, "fuse_pyramid");
  const Tensor<T>& f1 = g.value(stages[0]);
  require_rank(f1, 4, "pyramid stage 1");
  std::array<NodeId, 4> aligned{stages[0]};
  for (std::size_t i = 1; i < 4; ++i) {
    const Tensor<T>& prev = g.value(stages[i - 1]);
    const Tensor<T>& cur = g.value(stages[i]);
    require_rank(cur, 4, "pyramid stage");
    if (cur.dim(0) != f1.dim(0) || prev.dim(2) != 2 * cur.dim(2) || prev.dim(3) != 2 * cur.dim(3)) {
      throw DimensionError("pyramid stage " + std::to_string(i + 1) + " " + to_string(cur.shape()) +
                           " is not half of stage " + std::to_string(i) + " " + to_string(prev.shape()));
    }
    aligned[i] = ad::bilinear_upsample(g, stages[i], f1.dim(2), f1.dim(3));
  }
  return ad::concat_channels<T>(g, aligned);
}

template <typename T>
NodeId reduce_channels(Graph<T>& g, NodeId g0, const WTMParams<T>& p) {
  typename Graph<T>::Scope scope(g, "reduce_channels");
  return p.reduce.forward(g, g0);
}

template <typename T>
NodeId wtb_forward(Graph<T>& g, NodeId z, const WTBParams<T>& p) {
  const NodeId zh = ad::add(g, na_forward(g, p.norms[0].forward(g, z), p.dilated), z);
  const NodeId zl = ad::add(g, p.mlp_dilated.forward(g, p.norms[1].forward(g, zh)), zh);
  const NodeId zh1 = ad::add(g, na_forward(g, p.norms[2].forward(g, zl), p.local), zl);
  return ad::add(g, p.mlp_local.forward(g, p.norms[3].forward(g, zh1)), zh1);
}

template <typename T>
WaterfallNodes waterfall_forward(Graph<T>& g, NodeId z0, NodeId g0, const WTMParams<T>& p) {
  WaterfallNodes out;
  NodeId z = z0;
  for (std::size_t i = 0; i < p.blocks.size(); ++i) {
    typename Graph<T>::Scope scope(g, "wtb" + std::to_string(i + 1));
    z = wtb_forward(g, z, p.blocks[i]);
    out.branches[i] = z;
  }
  typename Graph<T>::Scope scope(g, "waterfall");
  const int k = p.config.dwp_kernel;
  out.pooled = ad::depthwise_avg_pool(g, g0, k, 1, k / 2);
  const std::array<NodeId, 5> streams{out.branches[0], out.branches[1], out.branches[2], out.branches[3], out.pooled};
  out.output = p.fuse.forward(g, ad::concat_channels<T>(g, streams));
  return out;
}

template <typename T>
NodeId merge_low_level(Graph<T>& g, NodeId waterfall, NodeId low_level, const WTMParams<T>& p) {
  typename Graph<T>::Scope scope(g, "merge_low_level");
  const Tensor<T>& fw = g.value(waterfall);
  const Tensor<T>& fl = g.value(low_level);
  require_rank(fl, 4, "low-level features");
  if (fl.dim(0) != fw.dim(0) || fl.dim(2) != fw.dim(2) || fl.dim(3) != fw.dim(3)) {
    throw DimensionError("low-level features " + to_string(fl.shape()) + " are not aligned with " +
                         to_string(fw.shape()));
  }
  const std::array<NodeId, 2> parts{waterfall, p.low_level_reduce.forward(g, low_level)};
  const NodeId cat = ad::concat_channels<T>(g, parts);
  return p.merge2.forward(g, p.merge1.forward(g, cat));
}

template <typename T>
NodeId wtm_forward(Graph<T>& g, const PyramidNodes& pyramid, const WTMParams<T>& p) {
  typename Graph<T>::Scope scope(g, "wtm");
  const Tensor<T>& f1 = g.value(pyramid.stages[0]);
  require_rank(f1, 4, "pyramid stage 1");
  p.config.validate_for(f1.dim(2), f1.dim(3));
  const NodeId g0 = fuse_pyramid(g, pyramid.stages);
  const NodeId z0 = reduce_channels(g, g0, p);
  const WaterfallNodes wf = waterfall_forward(g, z0, g0, p);
  return merge_low_level(g, wf.output, pyramid.low_level, p);
}

template <typename T>
Tensor<T> wtb_forward(const Tensor<T>& z, const WTBParams<T>& p) {
  Graph<T> g(false);
  return g.value(wtb_forward(g, g.parameter(z), p));
}

template <typename T>
Tensor<T> fuse_pyramid(const std::array<Tensor<T>, 4>& stages) {
  Graph<T> g(false);
  std::array<NodeId, 4> ids{};
  for (std::size_t i = 0; i < 4; ++i) ids[i] = g.parameter(stages[i]);
  return g.value(fuse_pyramid(g, ids));
}

#define WTPOSE_INSTANTIATE_WTM(T)                                                                  \
  template struct WTMParams<T>;                                                                    \
  template NodeId fuse_pyramid(Graph<T>&, const std::array<NodeId, 4>&);                           \
  template NodeId reduce_channels(Graph<T>&, NodeId, const WTMParams<T>&);                         \
  template NodeId wtb_forward(Graph<T>&, NodeId, const WTBParams<T>&);                             \
  template WaterfallNodes waterfall_forward(Graph<T>&, NodeId, NodeId, const WTMParams<T>&);       \
  template NodeId merge_low_level(Graph<T>&, NodeId, NodeId, const WTMParams<T>&);                 \
  template NodeId wtm_forward(Graph<T>&, const PyramidNodes&, const WTMParams<T>&);                \
  template Tensor<T> wtb_forward(const Tensor<T>&, const WTBParams<T>&);                           \
  template Tensor<T> fuse_pyramid(const std::array<Tensor<T>, 4>&);

WTPOSE_INSTANTIATE_WTM(float)
WTPOSE_INSTANTIATE_WTM(double)

}  // namespace wtpose
