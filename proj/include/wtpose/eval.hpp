#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "wtpose/pose.hpp"

namespace wtpose {

struct OKSParams {
  // Canonical COCO per-keypoint sigmas; the falloff constant is 2σ as in the
  // reference COCO evaluation.
  std::vector<double> sigmas;
  std::vector<double> thresholds;  // strictly increasing

  static OKSParams coco();
  double kappa(std::size_t joint) const { return 2.0 * sigmas.at(joint); }
  void validate() const;
};

// Mean over labeled joints of exp(-d² / (2 s² κ²)). Throws AnnotationError
// when the ground truth has no labeled joint.
double oks(std::span<const PredictedKeypoint> pred, const KeypointAnnotation& gt, const OKSParams& params);

struct Detection {
  std::int64_t image_id = 0;
  std::vector<PredictedKeypoint> keypoints;
  double score = 0.0;
};

struct APResult {
  double ap = 0.0;    // mean over thresholds
  double ap50 = 0.0;
  double ap75 = 0.0;
  double ar = 0.0;    // mean over thresholds of the final recall
  std::vector<double> ap_per_threshold;
  std::vector<double> recall_per_threshold;
};

// Per image and threshold, detections in descending score order each claim
// the unmatched ground truth with the highest OKS at or above the threshold.
// Precision is integrated at 101 recall points over all images. Ground
// truths without labeled joints are left out.
APResult average_precision(std::span<const Detection> detections, std::span<const KeypointAnnotation> gts,
                           const OKSParams& params);

}  // namespace wtpose
