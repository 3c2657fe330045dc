#include "wtpose/train.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <numeric>
#include <sstream>

#include "wtpose/checkpoint.hpp"
#include "wtpose/io.hpp"
#include "wtpose/synth.hpp"

namespace wtpose {

template <typename T>
Tensor<T> PoseDataset<T>::gather(std::span<const std::size_t> idx, const std::vector<bool>& flip) const {
  const std::int64_t c = images.dim(1), h = images.dim(2), w = images.dim(3);
  const auto plane = static_cast<std::size_t>(c * h * w);
  Tensor<T> out({static_cast<std::int64_t>(idx.size()), c, h, w});
  for (std::size_t i = 0; i < idx.size(); ++i) {
    const T* src = images.data() + idx[i] * plane;
    T* dst = out.data() + i * plane;
    if (flip.empty() || !flip[i]) {
      std::copy(src, src + plane, dst);
      continue;
    }
    for (std::int64_t row = 0; row < c * h; ++row) {
      std::reverse_copy(src + row * w, src + (row + 1) * w, dst + row * w);
    }
  }
  return out;
}

template <typename T>
PoseDataset<T> PoseDataset<T>::subset(std::size_t begin, std::size_t end) const {
  PoseDataset out;
  if (begin >= end) return out;
  std::vector<std::size_t> idx(end - begin);
  std::iota(idx.begin(), idx.end(), begin);
  out.images = gather(idx);
  out.annotations.assign(annotations.begin() + static_cast<std::ptrdiff_t>(begin),
                         annotations.begin() + static_cast<std::ptrdiff_t>(end));
  return out;
}

template <typename T>
PoseDataset<T> dataset_from_samples(const std::vector<SynthSample>& samples) {
  std::vector<Image> images;
  PoseDataset<T> d;
  for (const auto& s : samples) {
    images.push_back(s.image);
    d.annotations.push_back(s.annotation);
  }
  d.images = images_to_tensor<T>(images);
  return d;
}

template <typename T>
PoseDataset<T> load_dataset(const std::filesystem::path& dir, int input_h, int input_w) {
  const AnnotationFile file = load_annotations(dir / "annotations.json");
  std::map<std::int64_t, const ImageEntry*> by_id;
  for (const auto& e : file.images) by_id[e.id] = &e;
  std::map<std::int64_t, int> per_image;
  for (const auto& a : file.annotations) {
    if (++per_image[a.image_id] > 1) {
      throw AnnotationError("image " + std::to_string(a.image_id) + " has more than one person; crops are expected");
    }
  }
  std::vector<Image> images;
  PoseDataset<T> d;
  for (const auto& a : file.annotations) {
    const auto it = by_id.find(a.image_id);
    if (it == by_id.end()) throw AnnotationError("annotation refers to unknown image " + std::to_string(a.image_id));
    Image img = read_ppm(dir / it->second->file_name);
    if (img.width != input_w || img.height != input_h) {
      throw DimensionError(it->second->file_name + " is " + std::to_string(img.width) + "x" +
                           std::to_string(img.height) + ", the model input is " + std::to_string(input_w) + "x" +
                           std::to_string(input_h));
    }
    images.push_back(std::move(img));
    d.annotations.push_back(a);
  }
  if (images.empty()) throw AnnotationError(dir.string() + ": dataset has no annotations");
  d.images = images_to_tensor<T>(images);
  return d;
}

template <typename T>
std::pair<PoseDataset<T>, PoseDataset<T>> prepare_data(const RunConfig& cfg) {
  cfg.data.validate();
  PoseDataset<T> all = cfg.data.dataset.empty()
                           ? dataset_from_samples<T>(synth_samples(cfg.data.synth))
                           : load_dataset<T>(cfg.data.dataset, cfg.data.input_height, cfg.data.input_width);
  const auto hold = static_cast<std::size_t>(cfg.data.holdout);
  if (hold >= all.size()) throw ConfigError("holdout leaves no training images");
  if (hold == 0) return {std::move(all), PoseDataset<T>{}};
  const std::size_t cut = all.size() - hold;
  return {all.subset(0, cut), all.subset(cut, all.size())};
}

KeypointAnnotation flip_annotation(const KeypointAnnotation& ann) {
  KeypointAnnotation out = ann;
  const std::size_t k = ann.keypoints.size();
  for (std::size_t j = 0; j < k; ++j) {
    // COCO order: nose, then left/right pairs
    const std::size_t src = (k == kCocoJoints && j > 0) ? (j % 2 == 1 ? j + 1 : j - 1) : j;
    Keypoint p = ann.keypoints[src];
    p.x = ann.width - 1 - p.x;
    out.keypoints[j] = p;
  }
  return out;
}

template <typename T>
EvalSummary evaluate(const PoseModel<T>& model, const PoseDataset<T>& data, int batch_size) {
  EvalSummary s;
  const OKSParams params = OKSParams::coco();
  double oks_sum = 0.0;
  for (std::size_t b = 0; b < data.size(); b += static_cast<std::size_t>(batch_size)) {
    const std::size_t e = std::min(data.size(), b + static_cast<std::size_t>(batch_size));
    std::vector<std::size_t> idx(e - b);
    std::iota(idx.begin(), idx.end(), b);
    const HeatmapSet<T> hm = model.predict(data.gather(idx));
    for (std::size_t i = 0; i < idx.size(); ++i) {
      const auto& gt = data.annotations[idx[i]];
      Detection d{gt.image_id, decode_keypoints(hm, static_cast<std::int64_t>(i)), 0.0};
      for (const auto& k : d.keypoints) d.score += k.score;
      d.score /= static_cast<double>(std::max<std::size_t>(1, d.keypoints.size()));
      if (gt.visible_count() > 0) {
        oks_sum += oks(d.keypoints, gt, params);
        ++s.scored;
        for (std::size_t j = 0; j < gt.keypoints.size(); ++j) {
          if (gt.keypoints[j].v <= 0) continue;
          s.max_joint_error = std::max(s.max_joint_error, std::hypot(d.keypoints[j].x - gt.keypoints[j].x,
                                                                     d.keypoints[j].y - gt.keypoints[j].y));
        }
      }
      s.detections.push_back(std::move(d));
    }
  }
  s.mean_oks = s.scored ? oks_sum / static_cast<double>(s.scored) : 0.0;
  s.ap = average_precision(s.detections, data.annotations, params);
  return s;
}

template <typename T>
void AdamW<T>::step(const std::vector<std::pair<std::string, Tensor<T>*>>& params, double lr) {
  if (m_.empty()) {
    for (const auto& [name, p] : params) {
      m_.emplace_back(p->numel(), 0.0);
      v_.emplace_back(p->numel(), 0.0);
    }
  }
  if (m_.size() != params.size()) throw ContractError("AdamW: parameter list changed between steps");
  ++t_;
  const double b1 = cfg_.beta1, b2 = cfg_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor<T>& p = *params[i].second;
    const auto g = p.grad();
    auto& m = m_[i];
    auto& v = v_[i];
    const double decay = p.rank() >= 2 ? lr * cfg_.weight_decay : 0.0;
    T* w = p.data();
    for (std::size_t j = 0; j < m.size(); ++j) {
      const double gj = static_cast<double>(g[j]);
      m[j] = b1 * m[j] + (1.0 - b1) * gj;
      v[j] = b2 * v[j] + (1.0 - b2) * gj * gj;
      const double update = decay * static_cast<double>(w[j]) + lr * (m[j] / c1) / (std::sqrt(v[j] / c2) + cfg_.eps);
      w[j] = static_cast<T>(static_cast<double>(w[j]) - update);
    }
  }
}

std::string format_record(const EpochRecord& r) {
  std::ostringstream os;
  os << "epoch=" << r.epoch << " step=" << r.step << " lr=" << std::setprecision(6) << r.lr
     << " loss=" << std::setprecision(9) << r.loss << " mean_oks=";
  if (r.evaluated) {
    os << std::setprecision(6) << r.mean_oks;
  } else {
    os << "na";
  }
  return os.str();
}

template <typename T>
TrainResult train(const RunConfig& cfg, PoseModel<T>& model, const PoseDataset<T>& train_set,
                  const PoseDataset<T>& eval_set, const TrainOptions& opts) {
  cfg.optim.validate();
  if (train_set.size() == 0) throw ConfigError("training set is empty");
  const std::int64_t oh = model.input_h / kHeatmapStride, ow = model.input_w / kHeatmapStride;
  bool any_visible = false;
  for (const auto& a : train_set.annotations) any_visible = any_visible || a.visible_count() > 0;
  if (!any_visible) throw ConfigError("training set has no visible joints; nothing to learn from");

  std::ofstream metrics;
  if (opts.out_dir) {
    std::filesystem::create_directories(*opts.out_dir);
    metrics.open(*opts.out_dir / "metrics.log");
    if (!metrics) throw IoError("cannot write " + (*opts.out_dir / "metrics.log").string());
  }
  const PoseDataset<T>& held = eval_set.size() ? eval_set : train_set;
  auto params = model.named_parameters();
  AdamW<T> opt(cfg.optim);
  Rng rng(cfg.seed ^ 0x5eed5eedULL);
  TrainResult result;
  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), 0);
  const auto batch = static_cast<std::size_t>(cfg.optim.batch_size);
  bool stop = false;

  for (int epoch = 1; epoch <= cfg.optim.epochs && !stop; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng.engine());
    const double lr = cfg.optim.lr_at_epoch(epoch);
    double loss_sum = 0.0;
    int batches = 0;
    for (std::size_t b = 0; b < order.size(); b += batch) {
      if (cfg.optim.max_steps > 0 && opt.steps() >= cfg.optim.max_steps) {
        stop = true;
        break;
      }
      const std::span<const std::size_t> idx(order.data() + b, std::min(batch, order.size() - b));
      std::vector<bool> flip(idx.size(), false);
      std::vector<KeypointAnnotation> anns;
      for (std::size_t i = 0; i < idx.size(); ++i) {
        flip[i] = cfg.data.flip && rng.bernoulli(0.5);
        const auto& a = train_set.annotations[idx[i]];
        anns.push_back(flip[i] ? flip_annotation(a) : a);
      }
      const HeatmapTargets<T> targets = gaussian_targets<T>(anns, oh, ow, cfg.model.sigma);

      for (auto& [name, p] : params) p->zero_grad();
      Graph<T> g;
      const NodeId x = g.constant(train_set.gather(idx, flip));
      const NodeId loss = ad::mse_loss_visible(g, model.forward(g, x), targets.heatmaps.maps, targets.mask);
      const double lv = static_cast<double>(g.value(loss)[0]);
      g.backward(loss);
      for (auto& [name, p] : params) {
        const auto gr = p->grad();
        if (!std::all_of(gr.begin(), gr.end(), [](T v) { return std::isfinite(v); })) {
          throw NumericError("non-finite gradient in parameter '" + name + "' at epoch " + std::to_string(epoch));
        }
      }
      opt.step(params, lr);
      for (auto& [name, p] : params) {
        if (!p->all_finite()) throw NumericError("parameter '" + name + "' became non-finite at epoch " + std::to_string(epoch));
      }
      loss_sum += lv;
      ++batches;
    }
    if (batches == 0) break;

    EpochRecord rec{epoch, opt.steps(), lr, loss_sum / batches, 0.0, false};
    const bool last = stop || epoch == cfg.optim.epochs ||
                      (cfg.optim.max_steps > 0 && opt.steps() >= cfg.optim.max_steps);
    rec.evaluated = last || epoch % cfg.eval_every == 0;
    if (rec.evaluated) rec.mean_oks = evaluate(model, held).mean_oks;
    result.log.push_back(rec);
    const std::string line = format_record(rec);
    if (metrics.is_open()) metrics << line << '\n' << std::flush;
    if (opts.echo) *opts.echo << line << '\n' << std::flush;
    if (rec.evaluated && rec.mean_oks > result.best_oks) {
      result.best_oks = rec.mean_oks;
      result.best_epoch = epoch;
      if (opts.out_dir) save_checkpoint(model, cfg, *opts.out_dir / "best");
    }
  }
  result.steps = opt.steps();
  for (auto& [name, p] : params) p->drop_grad();
  if (opts.out_dir) save_checkpoint(model, cfg, *opts.out_dir / "final");
  return result;
}

#define WTPOSE_INSTANTIATE_TRAIN(T)                                                                         \
  template struct PoseDataset<T>;                                                                           \
  template PoseDataset<T> dataset_from_samples(const std::vector<SynthSample>&);                            \
  template PoseDataset<T> load_dataset(const std::filesystem::path&, int, int);                             \
  template std::pair<PoseDataset<T>, PoseDataset<T>> prepare_data(const RunConfig&);                        \
  template EvalSummary evaluate(const PoseModel<T>&, const PoseDataset<T>&, int);                           \
  template class AdamW<T>;                                                                                  \
  template TrainResult train(const RunConfig&, PoseModel<T>&, const PoseDataset<T>&, const PoseDataset<T>&, \
                             const TrainOptions&);

WTPOSE_INSTANTIATE_TRAIN(float)
WTPOSE_INSTANTIATE_TRAIN(double)

}  // namespace wtpose
