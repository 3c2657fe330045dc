#include "wtpose/eval.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

namespace wtpose {

OKSParams OKSParams::coco() {
  OKSParams p;
  p.sigmas = {.026, .025, .025, .035, .035, .079, .079, .072, .072, .062, .062, .107, .107, .087, .087, .089, .089};
  for (int i = 0; i < 10; ++i) p.thresholds.push_back(0.5 + 0.05 * i);
  return p;
}

void OKSParams::validate() const {
  for (double s : sigmas) {
    if (!(s > 0)) throw ConfigError("OKS sigmas must be positive");
  }
  for (std::size_t i = 1; i < thresholds.size(); ++i) {
    if (!(thresholds[i] > thresholds[i - 1])) throw ConfigError("OKS thresholds must be strictly increasing");
  }
}

double oks(std::span<const PredictedKeypoint> pred, const KeypointAnnotation& gt, const OKSParams& params) {
  if (pred.size() != gt.keypoints.size() || gt.keypoints.size() > params.sigmas.size()) {
    throw DimensionError("oks: prediction has " + std::to_string(pred.size()) + " joints, ground truth " +
                         std::to_string(gt.keypoints.size()));
  }
  double total = 0.0;
  int labeled = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const Keypoint& k = gt.keypoints[i];
    if (k.v <= 0) continue;
    const double dx = pred[i].x - k.x, dy = pred[i].y - k.y;
    const double kappa = params.kappa(i);
    total += std::exp(-(dx * dx + dy * dy) / (2.0 * gt.area * kappa * kappa));
    ++labeled;
  }
  if (labeled == 0) throw AnnotationError("oks: ground truth " + std::to_string(gt.image_id) + " has no labeled joints");
  return total / labeled;
}

APResult average_precision(std::span<const Detection> detections, std::span<const KeypointAnnotation> gts,
                           const OKSParams& params) {
  params.validate();
  // image id -> indices, iterated in ascending image order
  std::map<std::int64_t, std::pair<std::vector<std::size_t>, std::vector<std::size_t>>> images;
  std::size_t num_gt = 0;
  for (std::size_t i = 0; i < gts.size(); ++i) {
    if (gts[i].visible_count() == 0) continue;
    images[gts[i].image_id].second.push_back(i);
    ++num_gt;
  }
  for (std::size_t i = 0; i < detections.size(); ++i) images[detections[i].image_id].first.push_back(i);

  struct Scored {
    double score;
    std::vector<char> matched;  // per threshold
  };
  std::vector<Scored> all;
  const std::size_t nt = params.thresholds.size();
  for (auto& [id, idx] : images) {
    auto& [dets, gt_idx] = idx;
    std::stable_sort(dets.begin(), dets.end(),
                     [&](std::size_t a, std::size_t b) { return detections[a].score > detections[b].score; });
    std::vector<std::vector<double>> sim(dets.size(), std::vector<double>(gt_idx.size()));
    for (std::size_t d = 0; d < dets.size(); ++d) {
      for (std::size_t g = 0; g < gt_idx.size(); ++g) {
        sim[d][g] = oks(detections[dets[d]].keypoints, gts[gt_idx[g]], params);
      }
    }
    std::vector<Scored> local(dets.size());
    for (std::size_t d = 0; d < dets.size(); ++d) local[d] = {detections[dets[d]].score, std::vector<char>(nt, 0)};
    for (std::size_t t = 0; t < nt; ++t) {
      std::vector<char> taken(gt_idx.size(), 0);
      for (std::size_t d = 0; d < dets.size(); ++d) {
        double best = std::min(params.thresholds[t], 1.0 - 1e-10);
        std::ptrdiff_t m = -1;
        for (std::size_t g = 0; g < gt_idx.size(); ++g) {
          if (taken[g] || sim[d][g] < best) continue;
          best = sim[d][g];
          m = static_cast<std::ptrdiff_t>(g);
        }
        if (m < 0) continue;
        taken[static_cast<std::size_t>(m)] = 1;
        local[d].matched[t] = 1;
      }
    }
    for (auto& s : local) all.push_back(std::move(s));
  }
  std::stable_sort(all.begin(), all.end(), [](const Scored& a, const Scored& b) { return a.score > b.score; });

  APResult r;
  for (std::size_t t = 0; t < nt; ++t) {
    double ap = 0.0, recall = 0.0;
    if (num_gt > 0) {
      std::vector<double> rc(all.size()), pr(all.size());
      std::size_t tp = 0, fp = 0;
      for (std::size_t i = 0; i < all.size(); ++i) {
        all[i].matched[t] ? ++tp : ++fp;
        rc[i] = static_cast<double>(tp) / static_cast<double>(num_gt);
        pr[i] = static_cast<double>(tp) / static_cast<double>(tp + fp);
      }
      for (std::size_t i = pr.size(); i-- > 1;) pr[i - 1] = std::max(pr[i - 1], pr[i]);
      double acc = 0.0;
      for (int k = 0; k <= 100; ++k) {
        const double level = k / 100.0;
        const auto it = std::lower_bound(rc.begin(), rc.end(), level);
        acc += it == rc.end() ? 0.0 : pr[static_cast<std::size_t>(it - rc.begin())];
      }
      ap = acc / 101.0;
      recall = rc.empty() ? 0.0 : rc.back();
    }
    r.ap_per_threshold.push_back(ap);
    r.recall_per_threshold.push_back(recall);
    const double thr = params.thresholds[t];
    if (std::abs(thr - 0.5) < 1e-9) r.ap50 = ap;
    if (std::abs(thr - 0.75) < 1e-9) r.ap75 = ap;
  }
  if (nt > 0) {
    r.ap = std::accumulate(r.ap_per_threshold.begin(), r.ap_per_threshold.end(), 0.0) / static_cast<double>(nt);
    r.ar = std::accumulate(r.recall_per_threshold.begin(), r.recall_per_threshold.end(), 0.0) /
           static_cast<double>(nt);
  }
  return r;
}

}  // namespace wtpose
