#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "wtpose/graph.hpp"
#include "wtpose/layers.hpp"

namespace wtpose {

inline constexpr int kCocoJoints = 17;
inline constexpr int kHeatmapStride = 4;

struct Keypoint {
  double x = 0.0;
  double y = 0.0;
  int v = 0;  // 0 unlabeled/hidden, 1 labeled occluded, 2 visible
};

// One person: K keypoints in input pixels plus the object area s².
struct KeypointAnnotation {
  std::int64_t image_id = 0;
  int width = 0;
  int height = 0;
  double area = 0.0;
  std::vector<Keypoint> keypoints;

  int visible_count() const;
  // Throws AnnotationError for a labeled keypoint outside the frame.
  void validate() const;
};

struct PredictedKeypoint {
  double x = 0.0;
  double y = 0.0;
  double score = 0.0;
};

// K joint heatmaps [N, K, H/4, W/4].
template <typename T>
struct HeatmapSet {
  Tensor<T> maps;
  int stride = kHeatmapStride;

  std::int64_t batch() const { return maps.dim(0); }
  std::int64_t joints() const { return maps.dim(1); }
};

template <typename T>
struct HeatmapTargets {
  HeatmapSet<T> heatmaps;
  Tensor<T> mask;  // [N, K], 1 where the joint is supervised
};

template <typename T>
struct HeadParams {
  Conv2d<T> conv;  // 3×3, padding 1
  Conv2d<T> out;   // 1×1 to K maps

  static HeadParams init(std::int64_t channels, int joints, Rng& rng);

  template <typename F>
  void visit(const std::string& name, F&& f) {
    conv.visit(name + ".conv", f);
    out.visit(name + ".out", f);
  }
};

// conv3×3 -> GELU -> conv1×1; no output activation.
template <typename T>
NodeId head_forward(Graph<T>& g, NodeId features, const HeadParams<T>& p);

template <typename T>
HeatmapSet<T> head_forward(const Tensor<T>& features, const HeadParams<T>& p);

// Unnormalized Gaussians (peak 1) centred at ((x - 2) / 4, (y - 2) / 4) in
// heatmap cells, so that cell c is centred on input pixel 4c + 2. Joints
// with v = 0 get an all-zero map and mask 0.
template <typename T>
HeatmapTargets<T> gaussian_targets(const KeypointAnnotation& ann, std::int64_t out_h, std::int64_t out_w,
                                   double sigma = 2.0);

// Stacks per-image targets along the batch axis.
template <typename T>
HeatmapTargets<T> gaussian_targets(const std::vector<KeypointAnnotation>& anns, std::int64_t out_h,
                                   std::int64_t out_w, double sigma = 2.0);

// Plain-tensor form of the masked heatmap loss; `no_visible` is set when the
// mask is empty (the loss is then 0).
template <typename T>
double mse_loss_visible(const HeatmapSet<T>& pred, const HeatmapSet<T>& target, const Tensor<T>& mask,
                        bool* no_visible = nullptr);

// Argmax per joint, quarter-cell shift toward the larger neighbour on each
// axis, mapped to input pixels as 4·cell + 2. Ties go to the smaller row,
// then the smaller column.
template <typename T>
std::vector<PredictedKeypoint> decode_keypoints(const HeatmapSet<T>& h, std::int64_t batch_index = 0);

}  // namespace wtpose
