#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "wtpose/config.hpp"
#include "wtpose/eval.hpp"
#include "wtpose/model.hpp"

namespace wtpose {

// Images with one annotated person each.
template <typename T>
struct PoseDataset {
  Tensor<T> images;  // [N, 3, H, W]
  std::vector<KeypointAnnotation> annotations;

  std::size_t size() const { return annotations.size(); }
  // Rows `idx` as a batch; flip[i] mirrors sample i horizontally.
  Tensor<T> gather(std::span<const std::size_t> idx, const std::vector<bool>& flip = {}) const;
  PoseDataset subset(std::size_t begin, std::size_t end) const;
};

template <typename T>
PoseDataset<T> dataset_from_samples(const std::vector<SynthSample>& samples);

// Reads <dir>/annotations.json and the referenced PPMs.
template <typename T>
PoseDataset<T> load_dataset(const std::filesystem::path& dir, int input_h, int input_w);

// Dataset per the config (rendered in memory when no path is given),
// split into training and held-out parts. An empty held-out part means
// evaluation runs on the training set.
template <typename T>
std::pair<PoseDataset<T>, PoseDataset<T>> prepare_data(const RunConfig& cfg);

// Mirrors an annotation around the vertical axis, swapping left/right joints.
KeypointAnnotation flip_annotation(const KeypointAnnotation& ann);

struct EvalSummary {
  double mean_oks = 0.0;   // over images with at least one labeled joint
  std::size_t scored = 0;  // those images
  std::vector<Detection> detections;
  APResult ap;
  double max_joint_error = 0.0;  // px, over labeled joints
};

template <typename T>
EvalSummary evaluate(const PoseModel<T>& model, const PoseDataset<T>& data, int batch_size = 16);

// Decoupled weight decay Adam. Decay skips rank-1 tensors (biases, norms).
template <typename T>
class AdamW {
 public:
  explicit AdamW(const OptimConfig& cfg) : cfg_(cfg) {}

  void step(const std::vector<std::pair<std::string, Tensor<T>*>>& params, double lr);
  std::int64_t steps() const { return t_; }

 private:
  OptimConfig cfg_;
  std::int64_t t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

struct EpochRecord {
  int epoch = 0;
  std::int64_t step = 0;
  double lr = 0.0;
  double loss = 0.0;
  double mean_oks = 0.0;
  bool evaluated = false;
};

std::string format_record(const EpochRecord& r);

struct TrainResult {
  std::vector<EpochRecord> log;
  double best_oks = -1.0;
  int best_epoch = 0;
  std::int64_t steps = 0;
};

struct TrainOptions {
  std::optional<std::filesystem::path> out_dir;  // metrics.log, best/, final/
  std::ostream* echo = nullptr;                  // per-epoch lines
};

template <typename T>
TrainResult train(const RunConfig& cfg, PoseModel<T>& model, const PoseDataset<T>& train_set,
                  const PoseDataset<T>& eval_set, const TrainOptions& opts = {});

}  // namespace wtpose
