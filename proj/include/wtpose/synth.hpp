#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "wtpose/io.hpp"
#include "wtpose/pose.hpp"

namespace wtpose {

// Stick-figure renderer standing in for COCO crops. One figure per image.
struct SynthSpec {
  int num_images = 50;
  int width = 96;
  int height = 96;
  // Figure height as a fraction of the image height.
  double scale_min = 0.70;
  double scale_max = 0.90;
  // Bone lengths are jittered by a factor in [1 - jitter, 1 + jitter].
  double bone_jitter = 0.10;
  double limb_thickness = 3.0;  // px
  double joint_radius = 2.0;    // px
  double noise = 0.08;          // background noise std, fraction of 255
  double occlusion = 0.0;       // per-joint probability of being covered
  std::uint64_t seed = 42;

  void validate() const;
};

struct SynthSample {
  Image image;
  KeypointAnnotation annotation;
};

// Fill colour of each joint disc; tests use it to find rendered centres.
const std::array<std::array<std::uint8_t, 3>, kCocoJoints>& joint_colors();

// Skeleton edges as COCO joint index pairs.
const std::vector<std::array<int, 2>>& skeleton_edges();

std::vector<SynthSample> synth_samples(const SynthSpec& spec);

struct SynthSummary {
  int images = 0;
  int visible_joints = 0;
  bool trainable = false;  // at least one visible joint
};

// Writes images/000001.ppm ... and annotations.json under out_dir.
SynthSummary synth_generate(const SynthSpec& spec, const std::filesystem::path& out_dir);

}  // namespace wtpose
