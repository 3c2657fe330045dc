#include "wtpose/pose.hpp"

#include <cmath>

#include "wtpose/autodiff.hpp"

namespace wtpose {

int KeypointAnnotation::visible_count() const {
  int n = 0;
  for (const auto& k : keypoints) n += k.v > 0 ? 1 : 0;
  return n;
}

void KeypointAnnotation::validate() const {
  for (std::size_t i = 0; i < keypoints.size(); ++i) {
    const Keypoint& k = keypoints[i];
    if (k.v < 0 || k.v > 2) throw AnnotationError("keypoint " + std::to_string(i) + " has invalid visibility");
    if (k.v > 0 && (k.x < 0 || k.y < 0 || k.x >= width || k.y >= height)) {
      throw AnnotationError("image " + std::to_string(image_id) + ": keypoint " + std::to_string(i) + " at (" +
                            std::to_string(k.x) + ", " + std::to_string(k.y) + ") is outside the " +
                            std::to_string(width) + "x" + std::to_string(height) + " frame");
    }
  }
}

template <typename T>
HeadParams<T> HeadParams<T>::init(std::int64_t channels, int joints, Rng& rng) {
  HeadParams p{Conv2d<T>::init(channels, channels, 3, 1, 1, rng), Conv2d<T>::init(channels, joints, 1, 1, 0, rng)};
  // small final layer so the initial maps sit near the all-zero background
  p.out.weight = random_normal<T>(p.out.weight.shape(), rng, 1e-3);
  return p;
}

template <typename T>
NodeId head_forward(Graph<T>& g, NodeId features, const HeadParams<T>& p) {
  typename Graph<T>::Scope scope(g, "head");
  return p.out.forward(g, ad::gelu(g, p.conv.forward(g, features)));
}

template <typename T>
HeatmapSet<T> head_forward(const Tensor<T>& features, const HeadParams<T>& p) {
  Graph<T> g(false);
  return {g.value(head_forward(g, g.parameter(features), p))};
}

template <typename T>
HeatmapTargets<T> gaussian_targets(const KeypointAnnotation& ann, std::int64_t out_h, std::int64_t out_w,
                                   double sigma) {
  return gaussian_targets<T>(std::vector<KeypointAnnotation>{ann}, out_h, out_w, sigma);
}

template <typename T>
HeatmapTargets<T> gaussian_targets(const std::vector<KeypointAnnotation>& anns, std::int64_t out_h,
                                   std::int64_t out_w, double sigma) {
  if (!(sigma > 0)) throw ConfigError("gaussian_targets: sigma must be positive");
  if (anns.empty()) throw AnnotationError("gaussian_targets: no annotations");
  const auto joints = static_cast<std::int64_t>(anns.front().keypoints.size());
  const auto n = static_cast<std::int64_t>(anns.size());
  HeatmapTargets<T> out{{Tensor<T>({n, joints, out_h, out_w})}, Tensor<T>({n, joints})};
  const double denom = 2.0 * sigma * sigma;
  for (std::int64_t b = 0; b < n; ++b) {
    const KeypointAnnotation& ann = anns[static_cast<std::size_t>(b)];
    ann.validate();
    if (static_cast<std::int64_t>(ann.keypoints.size()) != joints) {
      throw AnnotationError("gaussian_targets: annotations disagree on joint count");
    }
    for (std::int64_t k = 0; k < joints; ++k) {
      const Keypoint& kp = ann.keypoints[static_cast<std::size_t>(k)];
      if (kp.v == 0) continue;
      out.mask[static_cast<std::size_t>(b * joints + k)] = T(1);
      const double cx = (kp.x - 2.0) / kHeatmapStride;
      const double cy = (kp.y - 2.0) / kHeatmapStride;
      for (std::int64_t i = 0; i < out_h; ++i) {
        for (std::int64_t j = 0; j < out_w; ++j) {
          const double dx = static_cast<double>(j) - cx, dy = static_cast<double>(i) - cy;
          out.heatmaps.maps.at(b, k, i, j) = static_cast<T>(std::exp(-(dx * dx + dy * dy) / denom));
        }
      }
    }
  }
  return out;
}

template <typename T>
double mse_loss_visible(const HeatmapSet<T>& pred, const HeatmapSet<T>& target, const Tensor<T>& mask,
                        bool* no_visible) {
  Graph<T> g(false);
  const NodeId loss = ad::mse_loss_visible(g, g.parameter(pred.maps), target.maps, mask);
  if (no_visible) {
    *no_visible = true;
    for (T m : mask.values()) {
      if (m != T(0)) *no_visible = false;
    }
  }
  return static_cast<double>(g.value(loss)[0]);
}

template <typename T>
std::vector<PredictedKeypoint> decode_keypoints(const HeatmapSet<T>& h, std::int64_t batch_index) {
  const Tensor<T>& m = h.maps;
  require_rank(m, 4, "decode_keypoints heatmaps");
  const std::int64_t joints = m.dim(1), rows = m.dim(2), cols = m.dim(3);
  std::vector<PredictedKeypoint> out;
  for (std::int64_t k = 0; k < joints; ++k) {
    std::int64_t bi = 0, bj = 0;
    T best = m.at(batch_index, k, 0, 0);
    for (std::int64_t i = 0; i < rows; ++i) {
      for (std::int64_t j = 0; j < cols; ++j) {
        if (m.at(batch_index, k, i, j) > best) {
          best = m.at(batch_index, k, i, j);
          bi = i;
          bj = j;
        }
      }
    }
    double ox = 0.0, oy = 0.0;
    if (bj > 0 && bj + 1 < cols) {
      const T left = m.at(batch_index, k, bi, bj - 1), right = m.at(batch_index, k, bi, bj + 1);
      ox = right > left ? 0.25 : (left > right ? -0.25 : 0.0);
    }
    if (bi > 0 && bi + 1 < rows) {
      const T up = m.at(batch_index, k, bi - 1, bj), down = m.at(batch_index, k, bi + 1, bj);
      oy = down > up ? 0.25 : (up > down ? -0.25 : 0.0);
    }
    out.push_back({(static_cast<double>(bj) + ox) * h.stride + h.stride / 2.0,
                   (static_cast<double>(bi) + oy) * h.stride + h.stride / 2.0, static_cast<double>(best)});
  }
  return out;
}

#define WTPOSE_INSTANTIATE_POSE(T)                                                                             \
  template struct HeadParams<T>;                                                                               \
  template NodeId head_forward(Graph<T>&, NodeId, const HeadParams<T>&);                                       \
  template HeatmapSet<T> head_forward(const Tensor<T>&, const HeadParams<T>&);                                 \
  template HeatmapTargets<T> gaussian_targets(const KeypointAnnotation&, std::int64_t, std::int64_t, double);  \
  template HeatmapTargets<T> gaussian_targets(const std::vector<KeypointAnnotation>&, std::int64_t,            \
                                              std::int64_t, double);                                           \
  template double mse_loss_visible(const HeatmapSet<T>&, const HeatmapSet<T>&, const Tensor<T>&, bool*);       \
  template std::vector<PredictedKeypoint> decode_keypoints(const HeatmapSet<T>&, std::int64_t);

WTPOSE_INSTANTIATE_POSE(float)
WTPOSE_INSTANTIATE_POSE(double)

}  // namespace wtpose
