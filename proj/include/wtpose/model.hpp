#pragma once

#include <string>
#include <utility>
#include <vector>

#include "wtpose/backbone.hpp"
#include "wtpose/pose.hpp"
#include "wtpose/wtm.hpp"

namespace wtpose {

struct ModelConfig {
  BackboneConfig backbone;
  WTMConfig wtm;
  int joints = kCocoJoints;
  double sigma = 2.0;  // target Gaussian width in heatmap cells

  // Checks widths and that every attention layer fits at this input size.
  void validate_for(std::int64_t input_h, std::int64_t input_w) const;
};

// Backbone -> WTM -> heatmap head.
template <typename T>
struct PoseModel {
  ModelConfig config;
  std::int64_t input_h = 0;
  std::int64_t input_w = 0;
  BackboneParams<T> backbone;
  WTMParams<T> wtm;
  HeadParams<T> head;

  static PoseModel init(const ModelConfig& cfg, std::int64_t input_h, std::int64_t input_w, std::uint64_t seed);

  // images [N, 3, H, W] -> heatmaps [N, K, H/4, W/4]
  NodeId forward(Graph<T>& g, NodeId images) const;
  HeatmapSet<T> predict(const Tensor<T>& images) const;

  template <typename F>
  void visit(F&& f) {
    backbone.visit("backbone", f);
    wtm.visit("wtm", f);
    head.visit("head", f);
  }

  std::vector<std::pair<std::string, Tensor<T>*>> named_parameters();
  std::size_t parameter_count();
};

}  // namespace wtpose
