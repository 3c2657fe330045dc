#include "wtpose/io.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iterator>
#include <map>
#include <sstream>

#include <json.hpp>

namespace wtpose {

using nlohmann::json;

namespace {

// Next whitespace-delimited header token, skipping '#' comments.
std::string header_token(std::istream& in) {
  std::string tok;
  int c;
  while ((c = in.get()) != EOF) {
    if (c == '#') {
      while ((c = in.get()) != EOF && c != '\n') {
      }
      continue;
    }
    if (std::isspace(c)) {
      if (!tok.empty()) break;
      continue;
    }
    tok.push_back(static_cast<char>(c));
  }
  return tok;
}

int header_int(std::istream& in, const std::filesystem::path& path) {
  const std::string tok = header_token(in);
  try {
    std::size_t used = 0;
    const int v = std::stoi(tok, &used);
    if (used == tok.size() && v > 0) return v;
  } catch (const std::exception&) {
  }
  throw IoError(path.string() + ": malformed PPM header near '" + tok + "'");
}

json parse_json_file(const std::filesystem::path& path) {
  try {
    return json::parse(read_text_file(path));
  } catch (const json::parse_error& e) {
    throw IoError(path.string() + ": " + e.what());
  }
}

}  // namespace

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("write failed: " + path.string());
}

Image read_ppm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  if (header_token(in) != "P6") throw IoError(path.string() + ": not a binary PPM (P6)");
  const int w = header_int(in, path);
  const int h = header_int(in, path);
  if (header_int(in, path) != 255) throw IoError(path.string() + ": only maxval 255 is supported");
  Image img(w, h);
  in.read(reinterpret_cast<char*>(img.rgb.data()), static_cast<std::streamsize>(img.rgb.size()));
  if (in.gcount() != static_cast<std::streamsize>(img.rgb.size())) {
    throw IoError(path.string() + ": truncated pixel data");
  }
  return img;
}

void write_ppm(const std::filesystem::path& path, const Image& img) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << "P6\n" << img.width << ' ' << img.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(img.rgb.data()), static_cast<std::streamsize>(img.rgb.size()));
  if (!out) throw IoError("write failed: " + path.string());
}

template <typename T>
Image heatmap_image(const Tensor<T>& maps, std::int64_t n, std::int64_t k) {
  require_rank(maps, 4, "heatmap_image");
  const auto h = static_cast<int>(maps.dim(2)), w = static_cast<int>(maps.dim(3));
  const T* m = &maps.at(n, k, 0, 0);
  const auto [lo, hi] = std::minmax_element(m, m + static_cast<std::ptrdiff_t>(h) * w);
  const double range = static_cast<double>(*hi) - static_cast<double>(*lo);
  Image img(w, h);
  for (int i = 0; i < h * w; ++i) {
    // flat maps come out black
    const double t = range > 0 ? (static_cast<double>(m[i]) - static_cast<double>(*lo)) / range : 0.0;
    const auto v = static_cast<std::uint8_t>(std::lround(t * 255.0));
    std::fill_n(&img.rgb[static_cast<std::size_t>(i) * 3], 3, v);
  }
  return img;
}

template <typename T>
Tensor<T> images_to_tensor(const std::vector<Image>& images) {
  if (images.empty()) throw DimensionError("images_to_tensor: no images");
  const int h = images.front().height, w = images.front().width;
  Tensor<T> out({static_cast<std::int64_t>(images.size()), 3, h, w});
  for (std::size_t n = 0; n < images.size(); ++n) {
    const Image& img = images[n];
    if (img.height != h || img.width != w) {
      throw DimensionError("images_to_tensor: image " + std::to_string(n) + " is " + std::to_string(img.width) +
                           "x" + std::to_string(img.height) + ", expected " + std::to_string(w) + "x" +
                           std::to_string(h));
    }
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        const std::uint8_t* p = img.pixel(x, y);
        for (int c = 0; c < 3; ++c) {
          out.at(static_cast<std::int64_t>(n), c, y, x) = static_cast<T>((p[c] / 255.0 - 0.5) / 0.25);
        }
      }
    }
  }
  return out;
}

AnnotationFile load_annotations(const std::filesystem::path& path) {
  const json j = parse_json_file(path);
  AnnotationFile f;
  std::map<std::int64_t, std::size_t> by_id;
  try {
    for (const auto& im : j.value("images", json::array())) {
      ImageEntry e;
      e.id = im.at("id").get<std::int64_t>();
      e.file_name = im.value("file_name", std::string());
      e.width = im.value("width", 0);
      e.height = im.value("height", 0);
      by_id[e.id] = f.images.size();
      f.images.push_back(std::move(e));
    }
    for (const auto& a : j.at("annotations")) {
      KeypointAnnotation ann;
      ann.image_id = a.at("image_id").get<std::int64_t>();
      ann.area = a.at("area").get<double>();
      const auto it = by_id.find(ann.image_id);
      ann.width = a.value("width", it != by_id.end() ? f.images[it->second].width : 0);
      ann.height = a.value("height", it != by_id.end() ? f.images[it->second].height : 0);
      const auto flat = a.at("keypoints").get<std::vector<double>>();
      if (flat.size() % 3 != 0) {
        throw AnnotationError(path.string() + ": keypoints of image " + std::to_string(ann.image_id) +
                              " are not [x, y, v] triples");
      }
      for (std::size_t i = 0; i < flat.size(); i += 3) {
        ann.keypoints.push_back({flat[i], flat[i + 1], static_cast<int>(flat[i + 2])});
      }
      ann.validate();
      f.annotations.push_back(std::move(ann));
    }
  } catch (const json::exception& e) {
    throw AnnotationError(path.string() + ": " + e.what());
  }
  return f;
}

void save_annotations(const std::filesystem::path& path, const AnnotationFile& file) {
  json images = json::array(), anns = json::array();
  for (const auto& e : file.images) {
    images.push_back({{"id", e.id}, {"file_name", e.file_name}, {"width", e.width}, {"height", e.height}});
  }
  std::int64_t next_id = 1;
  for (const auto& a : file.annotations) {
    json kp = json::array();
    for (const auto& k : a.keypoints) {
      kp.push_back(k.x);
      kp.push_back(k.y);
      kp.push_back(k.v);
    }
    anns.push_back({{"id", next_id++},
                    {"image_id", a.image_id},
                    {"category_id", 1},
                    {"width", a.width},
                    {"height", a.height},
                    {"area", a.area},
                    {"num_keypoints", a.visible_count()},
                    {"keypoints", kp}});
  }
  json j = {{"images", images},
            {"annotations", anns},
            {"categories", json::array({{{"id", 1}, {"name", "person"}}})}};
  write_text_file(path, j.dump(1) + "\n");
}

std::vector<Detection> load_predictions(const std::filesystem::path& path) {
  const json j = parse_json_file(path);
  std::vector<Detection> out;
  try {
    for (const auto& r : j) {
      Detection d;
      d.image_id = r.at("image_id").get<std::int64_t>();
      d.score = r.at("score").get<double>();
      const auto flat = r.at("keypoints").get<std::vector<double>>();
      if (flat.size() % 3 != 0) throw IoError(path.string() + ": keypoints are not [x, y, score] triples");
      for (std::size_t i = 0; i < flat.size(); i += 3) d.keypoints.push_back({flat[i], flat[i + 1], flat[i + 2]});
      out.push_back(std::move(d));
    }
  } catch (const json::exception& e) {
    throw IoError(path.string() + ": " + e.what());
  }
  return out;
}

void save_predictions(const std::filesystem::path& path, const std::vector<Detection>& dets) {
  json arr = json::array();
  for (const auto& d : dets) {
    json kp = json::array();
    for (const auto& k : d.keypoints) {
      kp.push_back(k.x);
      kp.push_back(k.y);
      kp.push_back(k.score);
    }
    arr.push_back({{"image_id", d.image_id}, {"category_id", 1}, {"keypoints", kp}, {"score", d.score}});
  }
  write_text_file(path, arr.dump(1) + "\n");
}

template Image heatmap_image(const Tensor<float>&, std::int64_t, std::int64_t);
template Image heatmap_image(const Tensor<double>&, std::int64_t, std::int64_t);
template Tensor<float> images_to_tensor(const std::vector<Image>&);
template Tensor<double> images_to_tensor(const std::vector<Image>&);

}  // namespace wtpose
