#include "wtpose/model.hpp"

#include <numeric>

namespace wtpose {

void ModelConfig::validate_for(std::int64_t input_h, std::int64_t input_w) const {
  backbone.validate_input(input_h, input_w);
  wtm.validate_for(input_h / 4, input_w / 4);
  if (joints < 1) throw ConfigError("joint count must be positive");
  if (!(sigma > 0)) throw ConfigError("target sigma must be positive");
}

template <typename T>
PoseModel<T> PoseModel<T>::init(const ModelConfig& cfg, std::int64_t input_h, std::int64_t input_w,
                                std::uint64_t seed) {
  cfg.validate_for(input_h, input_w);
  Rng rng(seed);
  PoseModel m;
  m.config = cfg;
  m.input_h = input_h;
  m.input_w = input_w;
  m.backbone = BackboneParams<T>::init(cfg.backbone, input_h, input_w, rng);
  const auto& sc = cfg.backbone.stage_channels;
  const std::int64_t pyramid_channels = std::accumulate(sc.begin(), sc.end(), std::int64_t{0});
  m.wtm = WTMParams<T>::init(cfg.wtm, pyramid_channels, cfg.backbone.low_level_channels, rng);
  m.head = HeadParams<T>::init(cfg.wtm.out_channels, cfg.joints, rng);
  return m;
}

template <typename T>
NodeId PoseModel<T>::forward(Graph<T>& g, NodeId images) const {
  const Tensor<T>& img = g.value(images);
  require_rank(img, 4, "model input");
  if (img.dim(1) != 3 || img.dim(2) != input_h || img.dim(3) != input_w) {
    throw DimensionError("model expects [N,3," + std::to_string(input_h) + "," + std::to_string(input_w) +
                         "] images, got " + to_string(img.shape()));
  }
  const PyramidNodes pyramid = backbone_forward(g, images, backbone);
  return head_forward(g, wtm_forward(g, pyramid, wtm), head);
}

template <typename T>
HeatmapSet<T> PoseModel<T>::predict(const Tensor<T>& images) const {
  Graph<T> g(false);
  return {g.value(forward(g, g.parameter(images)))};
}

template <typename T>
std::vector<std::pair<std::string, Tensor<T>*>> PoseModel<T>::named_parameters() {
  std::vector<std::pair<std::string, Tensor<T>*>> out;
  visit([&](const std::string& name, Tensor<T>& t) { out.emplace_back(name, &t); });
  return out;
}

template <typename T>
std::size_t PoseModel<T>::parameter_count() {
  std::size_t n = 0;
  visit([&](const std::string&, Tensor<T>& t) { n += t.numel(); });
  return n;
}

template struct PoseModel<float>;
template struct PoseModel<double>;

}  // namespace wtpose
