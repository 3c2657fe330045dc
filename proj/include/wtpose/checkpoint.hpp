#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "wtpose/config.hpp"
#include "wtpose/model.hpp"

namespace wtpose {

inline constexpr int kCheckpointVersion = 1;
inline constexpr const char* kManifestName = "manifest.json";
inline constexpr const char* kBlobName = "weights.bin";

struct TensorRecord {
  std::string name;
  Shape shape;
  std::string dtype;  // "f32" | "f64"
  std::uint64_t offset = 0;
  std::uint64_t length = 0;  // bytes
  std::uint32_t crc32 = 0;
};

// A checkpoint directory holds manifest.json and weights.bin. The blob is
// the little-endian tensors back to back in manifest order.
struct Checkpoint {
  int version = kCheckpointVersion;
  RunConfig config;
  std::vector<TensorRecord> tensors;
  std::vector<std::uint8_t> blob;

  Precision precision() const;
};

std::uint32_t crc32_bytes(const std::uint8_t* data, std::size_t n);

template <typename T>
Checkpoint make_checkpoint(PoseModel<T>& model, const RunConfig& cfg);

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& dir);

template <typename T>
void save_checkpoint(PoseModel<T>& model, const RunConfig& cfg, const std::filesystem::path& dir) {
  save_checkpoint(make_checkpoint(model, cfg), dir);
}

// Verifies the format version, the layout and every tensor's CRC-32.
// Throws LoadError (missing/unreadable), VersionError or CorruptionError.
Checkpoint load_checkpoint(const std::filesystem::path& dir);

// Copies weights into `model`; the first name, dtype or shape disagreement
// throws LoadError naming the tensor.
template <typename T>
void load_weights(const Checkpoint& ckpt, PoseModel<T>& model);

// Rebuilds the model from the stored config, then loads the weights.
template <typename T>
PoseModel<T> model_from_checkpoint(const Checkpoint& ckpt);

}  // namespace wtpose
