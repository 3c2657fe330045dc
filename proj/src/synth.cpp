#include "wtpose/synth.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <sstream>

#include "wtpose/layers.hpp"

namespace wtpose {

namespace {

using Vec = std::array<double, 2>;
using Color = std::array<std::uint8_t, 3>;

enum Joint {
  kNose, kLEye, kREye, kLEar, kREar, kLShoulder, kRShoulder, kLElbow, kRElbow,
  kLWrist, kRWrist, kLHip, kRHip, kLKnee, kRKnee, kLAnkle, kRAnkle
};

Vec operator+(Vec a, Vec b) { return {a[0] + b[0], a[1] + b[1]}; }
Vec operator*(double s, Vec a) { return {s * a[0], s * a[1]}; }

bool is_left(int j) { return j != kNose && j % 2 == 1; }

// Pose in figure units (height about 1), y down, hip centre at the origin.
std::array<Vec, kCocoJoints> random_pose(Rng& rng, double jitter) {
  auto bone = [&](double len) { return len * rng.uniform(1.0 - jitter, 1.0 + jitter); };
  const double tilt = rng.uniform(-0.15, 0.15);
  const Vec up{std::sin(tilt), -std::cos(tilt)};
  const Vec side{std::cos(tilt), std::sin(tilt)};  // toward the figure's left (image right)

  std::array<Vec, kCocoJoints> p{};
  const Vec hip{0.0, 0.0};
  const Vec neck = hip + bone(0.30) * up;
  p[kNose] = neck + bone(0.12) * up;
  p[kLEye] = p[kNose] + 0.04 * up + 0.06 * side;
  p[kREye] = p[kNose] + 0.04 * up + (-0.06) * side;
  p[kLEar] = p[kNose] + 0.01 * up + 0.13 * side;
  p[kREar] = p[kNose] + 0.01 * up + (-0.13) * side;
  const double shoulder = bone(0.11), hips = bone(0.08);
  p[kLShoulder] = neck + shoulder * side;
  p[kRShoulder] = neck + (-shoulder) * side;
  p[kLHip] = hip + hips * side;
  p[kRHip] = hip + (-hips) * side;

  // limb angles are measured from straight down, positive = away from the body
  auto limb = [&](Vec from, double sign, double angle, double len) {
    return from + len * Vec{sign * std::sin(angle), std::cos(angle)};
  };
  for (int s = 0; s < 2; ++s) {
    const double sign = s == 0 ? 1.0 : -1.0;
    const int o = s == 0 ? 0 : 1;  // left joints come first in each COCO pair
    const double arm = rng.uniform(-0.3, 2.4);
    p[kLElbow + o] = limb(p[kLShoulder + o], sign, arm, bone(0.16));
    p[kLWrist + o] = limb(p[kLElbow + o], sign, arm + rng.uniform(-1.5, 1.5), bone(0.15));
    const double leg = rng.uniform(-0.1, 0.5);
    p[kLKnee + o] = limb(p[kLHip + o], sign, leg, bone(0.24));
    p[kLAnkle + o] = limb(p[kLKnee + o], sign, leg + rng.uniform(-0.4, 0.4), bone(0.24));
  }
  return p;
}

double segment_distance(Vec p, Vec a, Vec b) {
  const double dx = b[0] - a[0], dy = b[1] - a[1];
  const double len2 = dx * dx + dy * dy;
  double t = len2 > 0 ? ((p[0] - a[0]) * dx + (p[1] - a[1]) * dy) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  return std::hypot(p[0] - (a[0] + t * dx), p[1] - (a[1] + t * dy));
}

void blend(Image& img, int x, int y, const Color& c, double alpha) {
  if (alpha <= 0) return;
  std::uint8_t* px = img.pixel(x, y);
  for (int i = 0; i < 3; ++i) {
    px[i] = static_cast<std::uint8_t>(std::lround(px[i] + alpha * (c[static_cast<std::size_t>(i)] - px[i])));
  }
}

// Pixel centres sit on integer coordinates. Coverage falls off over one
// pixel at the edge.
void draw_capsule(Image& img, Vec a, Vec b, double radius, const Color& c) {
  const int x0 = std::max(0, static_cast<int>(std::floor(std::min(a[0], b[0]) - radius - 1)));
  const int x1 = std::min(img.width - 1, static_cast<int>(std::ceil(std::max(a[0], b[0]) + radius + 1)));
  const int y0 = std::max(0, static_cast<int>(std::floor(std::min(a[1], b[1]) - radius - 1)));
  const int y1 = std::min(img.height - 1, static_cast<int>(std::ceil(std::max(a[1], b[1]) + radius + 1)));
  for (int y = y0; y <= y1; ++y) {
    for (int x = x0; x <= x1; ++x) {
      const double d = segment_distance({double(x), double(y)}, a, b);
      blend(img, x, y, c, std::clamp(radius + 0.5 - d, 0.0, 1.0));
    }
  }
}

}  // namespace

void SynthSpec::validate() const {
  if (num_images < 1) throw ConfigError("synth: num_images must be positive");
  if (width < 16 || height < 16) throw ConfigError("synth: images must be at least 16x16");
  if (!(scale_min > 0 && scale_min <= scale_max && scale_max <= 1.0)) {
    throw ConfigError("synth: need 0 < scale_min <= scale_max <= 1");
  }
  if (!(bone_jitter >= 0 && bone_jitter < 1)) throw ConfigError("synth: bone_jitter must be in [0, 1)");
  if (!(limb_thickness > 0) || !(joint_radius > 0)) throw ConfigError("synth: thickness and radius must be positive");
  if (!(noise >= 0)) throw ConfigError("synth: noise must be non-negative");
  if (!(occlusion >= 0 && occlusion <= 1)) throw ConfigError("synth: occlusion must be a probability");
}

const std::array<Color, kCocoJoints>& joint_colors() {
  static const std::array<Color, kCocoJoints> colors{{{255, 255, 255},
                                                      {255, 0, 255},
                                                      {0, 255, 255},
                                                      {255, 128, 192},
                                                      {128, 255, 192},
                                                      {255, 0, 0},
                                                      {0, 0, 255},
                                                      {255, 128, 0},
                                                      {0, 128, 255},
                                                      {255, 255, 0},
                                                      {0, 255, 0},
                                                      {192, 0, 64},
                                                      {64, 0, 192},
                                                      {160, 96, 0},
                                                      {0, 96, 160},
                                                      {128, 0, 0},
                                                      {0, 0, 128}}};
  return colors;
}

const std::vector<std::array<int, 2>>& skeleton_edges() {
  static const std::vector<std::array<int, 2>> edges{
      {kNose, kLEye},       {kNose, kREye},       {kLEye, kLEar},       {kREye, kREar},
      {kLShoulder, kRShoulder}, {kLShoulder, kLElbow}, {kLElbow, kLWrist}, {kRShoulder, kRElbow},
      {kRElbow, kRWrist},   {kLShoulder, kLHip},  {kRShoulder, kRHip},  {kLHip, kRHip},
      {kLHip, kLKnee},      {kLKnee, kLAnkle},    {kRHip, kRKnee},      {kRKnee, kRAnkle}};
  return edges;
}

std::vector<SynthSample> synth_samples(const SynthSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  const double margin = spec.joint_radius + spec.limb_thickness + 1.0;
  const double min_gap = 2.0 * spec.joint_radius + 1.0;
  std::vector<SynthSample> out;
  for (int n = 0; n < spec.num_images; ++n) {
    // Resample until the discs are apart and the figure fits; bounded so
    // extreme specs still terminate.
    std::array<Vec, kCocoJoints> pts{};
    for (int attempt = 0; attempt < 200; ++attempt) {
      pts = random_pose(rng, spec.bone_jitter);
      double lo_x = 1e9, hi_x = -1e9, lo_y = 1e9, hi_y = -1e9;
      for (const Vec& p : pts) {
        lo_x = std::min(lo_x, p[0]);
        hi_x = std::max(hi_x, p[0]);
        lo_y = std::min(lo_y, p[1]);
        hi_y = std::max(hi_y, p[1]);
      }
      double px = rng.uniform(spec.scale_min, spec.scale_max) * spec.height / (hi_y - lo_y);
      px = std::min(px, (spec.height - 2 * margin) / (hi_y - lo_y));
      px = std::min(px, (spec.width - 2 * margin) / (hi_x - lo_x));
      const double ox = rng.uniform(margin, spec.width - 1 - margin - px * (hi_x - lo_x)) - px * lo_x;
      const double oy = rng.uniform(margin, spec.height - 1 - margin - px * (hi_y - lo_y)) - px * lo_y;
      for (Vec& p : pts) p = {ox + px * p[0], oy + px * p[1]};
      bool apart = true;
      for (int i = 0; i < kCocoJoints && apart; ++i) {
        for (int j = i + 1; j < kCocoJoints; ++j) {
          if (std::hypot(pts[i][0] - pts[j][0], pts[i][1] - pts[j][1]) < min_gap) {
            apart = false;
            break;
          }
        }
      }
      if (apart) break;
    }

    SynthSample s{Image(spec.width, spec.height), {}};
    const Color base{static_cast<std::uint8_t>(rng.uniform_int(20, 90)),
                     static_cast<std::uint8_t>(rng.uniform_int(20, 90)),
                     static_cast<std::uint8_t>(rng.uniform_int(20, 90))};
    for (int y = 0; y < spec.height; ++y) {
      for (int x = 0; x < spec.width; ++x) {
        for (int c = 0; c < 3; ++c) {
          const double v = base[static_cast<std::size_t>(c)] + rng.normal(0.0, spec.noise * 255.0);
          s.image.pixel(x, y)[c] = static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
        }
      }
    }
    const double limb_r = spec.limb_thickness / 2.0;
    const Color left{230, 90, 60}, right{60, 130, 230}, center{210, 210, 90};
    draw_capsule(s.image, pts[kNose], 0.5 * (pts[kLShoulder] + pts[kRShoulder]), limb_r, center);
    for (const auto& e : skeleton_edges()) {
      const bool l = is_left(e[0]) && is_left(e[1]), r = !is_left(e[0]) && !is_left(e[1]) && e[0] != kNose;
      draw_capsule(s.image, pts[e[0]], pts[e[1]], limb_r, l ? left : r ? right : center);
    }
    for (int j = 0; j < kCocoJoints; ++j) draw_capsule(s.image, pts[j], pts[j], spec.joint_radius, joint_colors()[j]);

    // Occluders: noisy grey squares over the chosen joints.
    std::vector<std::array<int, 4>> boxes;
    for (int j = 0; j < kCocoJoints; ++j) {
      if (!rng.bernoulli(spec.occlusion)) continue;
      const double half = 2.0 * spec.joint_radius + 2.0;
      const int x0 = std::max(0, static_cast<int>(std::floor(pts[j][0] - half)));
      const int x1 = std::min(spec.width - 1, static_cast<int>(std::ceil(pts[j][0] + half)));
      const int y0 = std::max(0, static_cast<int>(std::floor(pts[j][1] - half)));
      const int y1 = std::min(spec.height - 1, static_cast<int>(std::ceil(pts[j][1] + half)));
      const auto grey = static_cast<double>(rng.uniform_int(90, 160));
      for (int y = y0; y <= y1; ++y) {
        for (int x = x0; x <= x1; ++x) {
          const auto v = static_cast<std::uint8_t>(std::clamp(std::lround(grey + rng.normal(0.0, 10.0)), 0L, 255L));
          std::fill_n(s.image.pixel(x, y), 3, v);
        }
      }
      boxes.push_back({x0, y0, x1, y1});
    }

    KeypointAnnotation& ann = s.annotation;
    ann.image_id = n + 1;
    ann.width = spec.width;
    ann.height = spec.height;
    double lo_x = 1e9, hi_x = -1e9, lo_y = 1e9, hi_y = -1e9;
    for (int j = 0; j < kCocoJoints; ++j) {
      const Vec& p = pts[j];
      lo_x = std::min(lo_x, p[0]);
      hi_x = std::max(hi_x, p[0]);
      lo_y = std::min(lo_y, p[1]);
      hi_y = std::max(hi_y, p[1]);
      const auto cx = static_cast<int>(std::lround(p[0])), cy = static_cast<int>(std::lround(p[1]));
      bool hidden = cx < 0 || cy < 0 || cx >= spec.width || cy >= spec.height;
      for (const auto& b : boxes) hidden = hidden || (cx >= b[0] && cx <= b[2] && cy >= b[1] && cy <= b[3]);
      ann.keypoints.push_back({p[0], p[1], hidden ? 0 : 2});
    }
    const double pad = spec.joint_radius + 0.5;
    ann.area = (hi_x - lo_x + 2 * pad) * (hi_y - lo_y + 2 * pad);
    out.push_back(std::move(s));
  }
  return out;
}

SynthSummary synth_generate(const SynthSpec& spec, const std::filesystem::path& out_dir) {
  const auto samples = synth_samples(spec);
  std::error_code ec;
  std::filesystem::create_directories(out_dir / "images", ec);
  if (ec) throw IoError("cannot create " + (out_dir / "images").string() + ": " + ec.message());
  AnnotationFile file;
  SynthSummary summary;
  for (const auto& s : samples) {
    std::ostringstream name;
    name << "images/" << std::setw(6) << std::setfill('0') << s.annotation.image_id << ".ppm";
    write_ppm(out_dir / name.str(), s.image);
    file.images.push_back({s.annotation.image_id, name.str(), s.image.width, s.image.height});
    file.annotations.push_back(s.annotation);
    ++summary.images;
    summary.visible_joints += s.annotation.visible_count();
  }
  save_annotations(out_dir / "annotations.json", file);
  summary.trainable = summary.visible_joints > 0;
  return summary;
}

}  // namespace wtpose
