#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "wtpose/eval.hpp"
#include "wtpose/pose.hpp"
#include "wtpose/tensor.hpp"

namespace wtpose {

// 8-bit interleaved RGB.
struct Image {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> rgb;

  Image() = default;
  Image(int w, int h) : width(w), height(h), rgb(static_cast<std::size_t>(w) * h * 3, 0) {}

  std::uint8_t* pixel(int x, int y) { return &rgb[(static_cast<std::size_t>(y) * width + x) * 3]; }
  const std::uint8_t* pixel(int x, int y) const { return &rgb[(static_cast<std::size_t>(y) * width + x) * 3]; }
};

// Binary PPM (P6, maxval 255).
Image read_ppm(const std::filesystem::path& path);
void write_ppm(const std::filesystem::path& path, const Image& img);

// Per-map min-max scaling to [0,255], written as gray RGB.
template <typename T>
Image heatmap_image(const Tensor<T>& maps, std::int64_t n, std::int64_t k);

// Stacks images into [N, 3, H, W], mapping bytes to (v / 255 - 0.5) / 0.25.
template <typename T>
Tensor<T> images_to_tensor(const std::vector<Image>& images);

struct ImageEntry {
  std::int64_t id = 0;
  std::string file_name;
  int width = 0;
  int height = 0;
};

// COCO-style keypoint file: {"images": [...], "annotations": [...]}.
// Annotations carry image_id, area, keypoints [x, y, v]*K and optionally
// width/height; missing sizes are taken from the image entry.
struct AnnotationFile {
  std::vector<ImageEntry> images;
  std::vector<KeypointAnnotation> annotations;
};

AnnotationFile load_annotations(const std::filesystem::path& path);
void save_annotations(const std::filesystem::path& path, const AnnotationFile& file);

// COCO result format: [{"image_id", "category_id", "keypoints", "score"}].
std::vector<Detection> load_predictions(const std::filesystem::path& path);
void save_predictions(const std::filesystem::path& path, const std::vector<Detection>& dets);

std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, const std::string& text);

}  // namespace wtpose
