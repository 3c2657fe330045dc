#include "wtpose/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include <zlib.h>

#include "wtpose/io.hpp"

namespace wtpose {

using nlohmann::json;

namespace {

template <typename T>
const char* dtype_name() {
  return sizeof(T) == 4 ? "f32" : "f64";
}

template <typename T>
void append_le(std::vector<std::uint8_t>& out, std::span<const T> values) {
  const std::size_t start = out.size();
  out.resize(start + values.size_bytes());
  std::memcpy(out.data() + start, values.data(), values.size_bytes());
  if constexpr (std::endian::native == std::endian::big) {
    for (std::size_t i = start; i < out.size(); i += sizeof(T)) std::reverse(&out[i], &out[i] + sizeof(T));
  }
}

template <typename T>
void read_le(const std::uint8_t* src, std::span<T> values) {
  std::memcpy(values.data(), src, values.size_bytes());
  if constexpr (std::endian::native == std::endian::big) {
    auto* b = reinterpret_cast<std::uint8_t*>(values.data());
    for (std::size_t i = 0; i < values.size_bytes(); i += sizeof(T)) std::reverse(b + i, b + i + sizeof(T));
  }
}

}  // namespace

std::uint32_t crc32_bytes(const std::uint8_t* data, std::size_t n) {
  uLong crc = crc32(0L, Z_NULL, 0);
  while (n > 0) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(n, 1u << 30));
    crc = crc32(crc, data, chunk);
    data += chunk;
    n -= chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

Precision Checkpoint::precision() const {
  if (tensors.empty()) return config.precision;
  return parse_precision(tensors.front().dtype);
}

template <typename T>
Checkpoint make_checkpoint(PoseModel<T>& model, const RunConfig& cfg) {
  Checkpoint c;
  c.config = cfg;
  c.config.model = model.config;
  c.config.data.input_height = static_cast<int>(model.input_h);
  c.config.data.input_width = static_cast<int>(model.input_w);
  c.config.precision = sizeof(T) == 4 ? Precision::f32 : Precision::f64;
  for (auto& [name, t] : model.named_parameters()) {
    TensorRecord r;
    r.name = name;
    r.shape = t->shape();
    r.dtype = dtype_name<T>();
    r.offset = c.blob.size();
    append_le<T>(c.blob, t->values());
    r.length = c.blob.size() - r.offset;
    r.crc32 = crc32_bytes(c.blob.data() + r.offset, r.length);
    c.tensors.push_back(std::move(r));
  }
  return c;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  json tensors = json::array();
  for (const auto& r : ckpt.tensors) {
    tensors.push_back({{"name", r.name},
                       {"shape", r.shape},
                       {"dtype", r.dtype},
                       {"offset", r.offset},
                       {"length", r.length},
                       {"crc32", r.crc32}});
  }
  const json manifest = {{"format", "wtpose-checkpoint"},
                         {"version", ckpt.version},
                         {"byte_order", "little"},
                         {"blob", kBlobName},
                         {"blob_length", ckpt.blob.size()},
                         {"config", ckpt.config},
                         {"tensors", tensors}};
  std::ofstream blob(dir / kBlobName, std::ios::binary);
  if (!blob) throw IoError("cannot write " + (dir / kBlobName).string());
  blob.write(reinterpret_cast<const char*>(ckpt.blob.data()), static_cast<std::streamsize>(ckpt.blob.size()));
  if (!blob) throw IoError("write failed: " + (dir / kBlobName).string());
  write_text_file(dir / kManifestName, manifest.dump(1) + "\n");
}

Checkpoint load_checkpoint(const std::filesystem::path& dir) {
  const auto manifest_path = dir / kManifestName;
  if (!std::filesystem::exists(manifest_path)) throw LoadError("checkpoint manifest not found: " + manifest_path.string());
  Checkpoint c;
  json m;
  try {
    m = json::parse(read_text_file(manifest_path));
  } catch (const json::exception& e) {
    throw LoadError(manifest_path.string() + ": " + e.what());
  }
  try {
    if (m.value("format", std::string()) != "wtpose-checkpoint") {
      throw LoadError(manifest_path.string() + ": not a wtpose checkpoint manifest");
    }
    c.version = m.at("version").get<int>();
    if (c.version != kCheckpointVersion) {
      throw VersionError(manifest_path.string() + ": checkpoint format version " + std::to_string(c.version) +
                         ", this build reads version " + std::to_string(kCheckpointVersion));
    }
    if (m.value("byte_order", std::string("little")) != "little") throw LoadError("unsupported byte order");
    c.config = m.at("config").get<RunConfig>();
    for (const auto& t : m.at("tensors")) {
      TensorRecord r;
      r.name = t.at("name").get<std::string>();
      r.shape = t.at("shape").get<Shape>();
      r.dtype = t.at("dtype").get<std::string>();
      r.offset = t.at("offset").get<std::uint64_t>();
      r.length = t.at("length").get<std::uint64_t>();
      r.crc32 = t.at("crc32").get<std::uint32_t>();
      c.tensors.push_back(std::move(r));
    }
  } catch (const json::exception& e) {
    throw LoadError(manifest_path.string() + ": " + e.what());
  } catch (const ConfigError& e) {
    throw LoadError(manifest_path.string() + ": " + e.what());
  }

  const auto blob_path = dir / m.value("blob", std::string(kBlobName));
  std::ifstream in(blob_path, std::ios::binary);
  if (!in) throw LoadError("checkpoint blob not found: " + blob_path.string());
  c.blob.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());

  std::uint64_t expect = 0;
  for (const auto& r : c.tensors) {
    const std::size_t elem = r.dtype == "f32" ? 4 : r.dtype == "f64" ? 8 : 0;
    if (elem == 0) throw LoadError("tensor '" + r.name + "' has unknown dtype '" + r.dtype + "'");
    if (r.offset != expect) throw CorruptionError("tensor '" + r.name + "' is not contiguous with its predecessor");
    std::uint64_t count = 1;
    for (auto e : r.shape) {
      if (e <= 0) throw CorruptionError("tensor '" + r.name + "' has a non-positive extent");
      count *= static_cast<std::uint64_t>(e);
    }
    if (r.length != count * elem) throw CorruptionError("tensor '" + r.name + "' length disagrees with its shape");
    if (r.offset + r.length > c.blob.size()) throw CorruptionError("tensor '" + r.name + "' runs past the blob end");
    const std::uint32_t crc = crc32_bytes(c.blob.data() + r.offset, r.length);
    if (crc != r.crc32) {
      throw CorruptionError("checksum mismatch in tensor '" + r.name + "' (stored " + std::to_string(r.crc32) +
                            ", computed " + std::to_string(crc) + ")");
    }
    expect = r.offset + r.length;
  }
  if (expect != c.blob.size()) {
    throw CorruptionError("blob holds " + std::to_string(c.blob.size()) + " bytes, manifest describes " +
                          std::to_string(expect));
  }
  return c;
}

template <typename T>
void load_weights(const Checkpoint& ckpt, PoseModel<T>& model) {
  auto params = model.named_parameters();
  const std::size_t n = std::min(params.size(), ckpt.tensors.size());
  for (std::size_t i = 0; i < n; ++i) {
    const auto& r = ckpt.tensors[i];
    auto& [name, t] = params[i];
    if (r.name != name) throw LoadError("checkpoint tensor " + std::to_string(i) + " is '" + r.name + "', model expects '" + name + "'");
    if (r.dtype != dtype_name<T>()) {
      throw LoadError("tensor '" + r.name + "' is " + r.dtype + ", model is " + dtype_name<T>());
    }
    if (r.shape != t->shape()) {
      throw LoadError("shape conflict in tensor '" + r.name + "': checkpoint " + to_string(r.shape) + ", model " +
                      to_string(t->shape()));
    }
  }
  if (params.size() != ckpt.tensors.size()) {
    const std::string missing = params.size() > n ? params[n].first : ckpt.tensors[n].name;
    throw LoadError("tensor count differs (checkpoint " + std::to_string(ckpt.tensors.size()) + ", model " +
                    std::to_string(params.size()) + "); first unmatched tensor '" + missing + "'");
  }
  for (std::size_t i = 0; i < n; ++i) read_le<T>(ckpt.blob.data() + ckpt.tensors[i].offset, params[i].second->values());
}

template <typename T>
PoseModel<T> model_from_checkpoint(const Checkpoint& ckpt) {
  const auto& cfg = ckpt.config;
  auto model = PoseModel<T>::init(cfg.model, cfg.data.input_height, cfg.data.input_width, cfg.seed);
  load_weights(ckpt, model);
  return model;
}

template Checkpoint make_checkpoint(PoseModel<float>&, const RunConfig&);
template Checkpoint make_checkpoint(PoseModel<double>&, const RunConfig&);
template void load_weights(const Checkpoint&, PoseModel<float>&);
template void load_weights(const Checkpoint&, PoseModel<double>&);
template PoseModel<float> model_from_checkpoint(const Checkpoint&);
template PoseModel<double> model_from_checkpoint(const Checkpoint&);

}  // namespace wtpose
