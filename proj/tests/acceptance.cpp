// One PASS/FAIL line per acceptance criterion. Exits 0 only if all pass.

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "oracles.hpp"
#include "wtpose/checkpoint.hpp"
#include "wtpose/suites.hpp"
#include "wtpose/train.hpp"

using namespace wtpose;
namespace fs = std::filesystem;
using TD = Tensor<double>;

namespace {

// tolerances
constexpr double kAttentionTol = 1e-10;
constexpr int kAttentionConfigs = 24;
constexpr double kFixtureTol = 1e-9;
constexpr double kOksScalarTol = 1e-12;
constexpr double kDeskOks = 0.95;
constexpr double kDeskJointPx = 2.0;
constexpr std::int64_t kDeskMaxSteps = 2000;
constexpr std::size_t kMinApScenarios = 10000;

struct Verdict {
  bool ok = true;
  std::string detail;
};

std::string fmt(double v) {
  std::ostringstream os;
  os << v;
  return os.str();
}

template <typename P>
void randomize(P& params, Rng& rng, double scale = 0.2) {
  params.visit("p", [&](const std::string& name, TD& t) {
    const bool gamma = name.size() >= 6 && name.compare(name.size() - 6, 6, ".gamma") == 0;
    for (auto& v : t.values()) v = gamma ? 1.0 + rng.normal(0.0, 0.1) : rng.normal(0.0, scale);
  });
}

AttentionProjections<double> random_proj(std::int64_t c, Rng& rng) {
  auto lin = [&] {
    return Linear<double>{random_normal<double>({c, c}, rng, 0.5), random_normal<double>({c}, rng, 0.2)};
  };
  return {lin(), lin(), lin(), lin()};
}

Verdict receptive_fields() {
  Verdict v;
  const std::array<int, 4> dil{1, 2, 4, 8}, expect{7, 13, 25, 49};
  for (int i = 0; i < 4; ++i) {
    const int rf = receptive_field(7, dil[i]);
    v.ok = v.ok && rf == expect[i];
    v.detail += (i ? "," : "") + std::to_string(rf);
  }
  v.detail = "rf(7,{1,2,4,8}) = [" + v.detail + "]";
  return v;
}

Verdict attention_oracle() {
  Verdict v;
  Rng rng(2024);
  const std::array<std::array<int, 2>, 12> kd{
      {{3, 1}, {3, 2}, {3, 3}, {5, 1}, {5, 2}, {7, 1}, {7, 2}, {3, 4}, {7, 4}, {3, 8}, {7, 8}, {5, 4}}};
  double worst = 0.0;
  for (int rep = 0; rep < kAttentionConfigs; ++rep) {
    const auto [k, d] = kd[rep % kd.size()];
    const int heads = static_cast<int>(rng.uniform_int(1, 3));
    const int channels = heads * static_cast<int>(rng.uniform_int(1, 3));
    const std::int64_t h = k * d + rng.uniform_int(0, 4), w = k * d + rng.uniform_int(0, 4);
    const NAConfig cfg{k, d, heads, channels};
    const TD x = random_normal<double>({1 + rep % 2, channels, h, w}, rng);
    const auto proj = random_proj(channels, rng);
    const RelPosBias<double> bias{random_normal<double>({heads, 2 * k - 1, 2 * k - 1}, rng, 0.5)};
    worst = std::max(worst, oracle::max_abs_diff(na_forward(x, cfg, proj, bias), oracle::na(x, cfg, proj, bias)));
  }
  double global = 0.0;
  for (int side : {3, 5}) {
    const NAConfig cfg{side, 1, 2, 8};
    const TD x = random_normal<double>({2, 8, side, side}, rng);
    const auto proj = random_proj(8, rng);
    global = std::max(global, oracle::max_abs_diff(na_forward(x, cfg, proj, RelPosBias<double>::zeros(2, side)),
                                                   oracle::global_attention(x, 2, proj)));
  }
  v.ok = worst < kAttentionTol && global < kAttentionTol;
  v.detail = std::to_string(kAttentionConfigs) + " configs max err " + fmt(worst) + ", global degeneration " +
             fmt(global) + " (tol " + fmt(kAttentionTol) + ")";
  return v;
}

Verdict gradients() {
  Verdict v;
  int n = 0;
  for (const auto& r : run_gradcheck_suite(GradScope::full)) {
    ++n;
    if (!r.pass()) {
      v.ok = false;
      v.detail += r.component + " " + fmt(r.max_error) + " >= " + fmt(r.threshold) + "; ";
    }
  }
  if (v.ok) v.detail = std::to_string(n) + " components within their thresholds";
  return v;
}

Verdict structure() {
  Verdict v;
  Rng rng(4);
  const WTMConfig def;
  int blocks = 0;
  for (std::size_t b = 0; b < def.blocks.size(); ++b) {
    WTBParams<double> p = WTBParams<double>::init(def, b, rng);
    randomize(p, rng);
    p.zero_sublayer_outputs();
    const TD z = random_normal<double>({1, def.channels, 56, 56}, rng, 3.0);
    if (!(wtb_forward(z, p) == z)) {
      v.ok = false;
      v.detail += "block " + std::to_string(b) + " not identity; ";
    }
    ++blocks;
  }
  WTMParams<float> p = WTMParams<float>::init(def, 480, 64, rng);
  const std::array<int, 4> ch{32, 64, 128, 256};
  for (auto [h, w] : {std::pair{224, 224}, std::pair{256, 224}}) {
    Graph<float> g(false);
    PyramidNodes nodes;
    for (int i = 0; i < 4; ++i)
      nodes.stages[i] = g.constant(random_normal<float>({1, ch[i], (h / 4) >> i, (w / 4) >> i}, rng));
    nodes.low_level = g.constant(random_normal<float>({1, 64, h / 4, w / 4}, rng));
    const Shape got = g.value(wtm_forward(g, nodes, p)).shape();
    if (got != Shape{1, 128, h / 4, w / 4}) {
      v.ok = false;
      v.detail += "WTM " + std::to_string(h) + "x" + std::to_string(w) + " gave " + to_string(got) + "; ";
    }
  }
  if (v.ok) v.detail = std::to_string(blocks) + " WTBs bit-exact identity, WTM [N,128,H/4,W/4] at 224x224, 256x224";
  return v;
}

Verdict fixtures() {
  Verdict v;
  WTMConfig cfg;
  cfg.channels = 8;
  cfg.heads = 2;
  cfg.mlp_ratio = 2;
  cfg.window = 3;
  cfg.blocks = {{{2, 1}, {2, 1}, {3, 1}, {2, 1}}};
  cfg.low_level_channels = 6;
  cfg.out_channels = 5;
  double worst[4] = {0, 0, 0, 0};
  for (std::uint64_t seed : {9u, 19u, 29u}) {
    Rng rng(seed);
    WTMParams<double> p = WTMParams<double>::init(cfg, 14, 4, rng);
    randomize(p, rng);
    std::array<TD, 4> stages;
    const std::array<int, 4> ch{2, 3, 4, 5};
    for (int i = 0; i < 4; ++i) stages[i] = random_normal<double>({2, ch[i], 16 >> i, 16 >> i}, rng);
    const TD llf = random_normal<double>({2, 4, 16, 16}, rng);

    Graph<double> g(false);
    std::array<NodeId, 4> ids{};
    for (int i = 0; i < 4; ++i) ids[i] = g.parameter(stages[i]);
    const NodeId g0 = fuse_pyramid(g, ids);
    const NodeId z0 = reduce_channels(g, g0, p);
    const WaterfallNodes wf = waterfall_forward(g, z0, g0, p);
    const NodeId out = merge_low_level(g, wf.output, g.parameter(llf), p);

    const oracle::WtmTrace t = oracle::wtm(stages, llf, p);
    const double e[4] = {oracle::max_abs_diff(g.value(g0), t.g0), oracle::max_abs_diff(g.value(z0), t.z0),
                         oracle::max_abs_diff(g.value(wf.output), t.waterfall),
                         oracle::max_abs_diff(g.value(out), t.output)};
    for (int i = 0; i < 4; ++i) worst[i] = std::max(worst[i], e[i]);
  }
  v.ok = std::all_of(std::begin(worst), std::end(worst), [](double e) { return e < kFixtureTol; });
  v.detail = "g0 " + fmt(worst[0]) + ", z0 " + fmt(worst[1]) + ", waterfall " + fmt(worst[2]) + ", merge " +
             fmt(worst[3]) + " (tol " + fmt(kFixtureTol) + ")";
  return v;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

Verdict desk_learning(const fs::path& work) {
  Verdict v;
  const RunConfig cfg = desk_config();
  cfg.validate();
  auto [train_set, held] = prepare_data<float>(cfg);
  auto model = PoseModel<float>::init(cfg.model, cfg.data.input_height, cfg.data.input_width, cfg.seed);
  const auto t0 = std::chrono::steady_clock::now();
  const TrainResult r = train(cfg, model, train_set, held, {work / "desk", &std::cerr});
  const double minutes = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() / 60.0;
  const EvalSummary s = evaluate(model, train_set);

  // the first two epochs again, twice
  RunConfig shortcfg = cfg;
  shortcfg.optim.max_steps = 2 * static_cast<std::int64_t>((train_set.size() + cfg.optim.batch_size - 1) /
                                                           cfg.optim.batch_size);
  std::string blobs[2];
  bool prefix = true;
  for (int i = 0; i < 2; ++i) {
    auto m = PoseModel<float>::init(cfg.model, cfg.data.input_height, cfg.data.input_width, cfg.seed);
    const TrainResult sr = train(shortcfg, m, train_set, held, {work / ("repeat" + std::to_string(i)), nullptr});
    blobs[i] = slurp(work / ("repeat" + std::to_string(i)) / "final" / kBlobName);
    for (std::size_t e = 0; e < sr.log.size(); ++e) prefix = prefix && sr.log[e].loss == r.log[e].loss;
  }
  const bool deterministic = prefix && !blobs[0].empty() && blobs[0] == blobs[1];

  v.ok = s.mean_oks >= kDeskOks && s.max_joint_error <= kDeskJointPx && r.steps <= kDeskMaxSteps && deterministic;
  v.detail = "mean OKS " + fmt(s.mean_oks) + " (>= " + fmt(kDeskOks) + "), max joint error " +
             fmt(s.max_joint_error) + " px (<= " + fmt(kDeskJointPx) + "), " + std::to_string(r.steps) +
             " steps, " + (deterministic ? "deterministic" : "NOT deterministic") + ", " + fmt(minutes) + " min";
  return v;
}

KeypointAnnotation person(std::int64_t image_id, double cx, double cy) {
  KeypointAnnotation a;
  a.image_id = image_id;
  a.width = 640;
  a.height = 480;
  a.area = 1600.0;
  for (int j = 0; j < kCocoJoints; ++j) a.keypoints.push_back({cx + (j % 5) * 4.0, cy + (j / 5) * 5.0, 2});
  return a;
}

std::vector<PredictedKeypoint> shifted(const KeypointAnnotation& a, double dx) {
  std::vector<PredictedKeypoint> p;
  for (const auto& k : a.keypoints) p.push_back({k.x + dx, k.y, 1.0});
  return p;
}

bool same(const APResult& a, const APResult& b) {
  return a.ap == b.ap && a.ap50 == b.ap50 && a.ap75 == b.ap75 && a.ar == b.ar &&
         a.ap_per_threshold == b.ap_per_threshold && a.recall_per_threshold == b.recall_per_threshold;
}

Verdict evaluation() {
  Verdict v;
  const OKSParams params = OKSParams::coco();
  const std::array<double, 5> offset{0, 0, 2.5, 6.0, 400.0};
  std::size_t scenarios = 0, mismatches = 0;
  for (int n = 1; n <= 4; ++n) {
    int states = 1;
    for (int i = 0; i < n; ++i) states *= 6;
    for (int split = 0; split < (n > 1 ? 2 : 1); ++split) {
      std::vector<KeypointAnnotation> gts;
      for (int i = 0; i < n; ++i) gts.push_back(person(split ? 1 + i % 2 : 1, 10 + 60.0 * i, 20 + 7.0 * i));
      for (int code = 0; code < states; ++code) {
        std::vector<Detection> base;
        int c = code;
        for (int i = 0; i < n; ++i, c /= 6) {
          const int s = c % 6;
          if (s == 0) continue;
          const auto& src = s == 5 ? gts[(i + 1) % n] : gts[i];
          base.push_back({gts[i].image_id, shifted(src, s == 5 ? 0.5 : offset[s]), 0.0});
        }
        std::vector<int> perm(base.size());
        std::iota(perm.begin(), perm.end(), 0);
        do {
          std::vector<Detection> dets = base;
          for (std::size_t i = 0; i < dets.size(); ++i) dets[i].score = 0.1 + 0.2 * perm[i];
          if (!same(average_precision(dets, gts, params), oracle::average_precision(dets, gts, params))) ++mismatches;
          ++scenarios;
        } while (std::next_permutation(perm.begin(), perm.end()));
      }
    }
  }

  KeypointAnnotation one = person(1, 100, 100);
  for (std::size_t j = 1; j < one.keypoints.size(); ++j) one.keypoints[j].v = 0;
  const double at0 = oks(shifted(one, 0.0), one, params);
  const double d = std::sqrt(one.area) * params.kappa(0) * std::sqrt(2.0);
  const double at_d = oks(shifted(one, d), one, params);
  const double oks_err = std::max(std::abs(at0 - 1.0), std::abs(at_d - std::exp(-1.0)));

  v.ok = mismatches == 0 && scenarios >= kMinApScenarios && oks_err <= kOksScalarTol;
  v.detail = std::to_string(scenarios) + " AP scenarios, " + std::to_string(mismatches) +
             " mismatches; OKS scalar error " + fmt(oks_err);
  return v;
}

template <typename T>
bool round_trip(const fs::path& dir, std::string& why) {
  const RunConfig cfg = desk_config();
  auto model = PoseModel<T>::init(cfg.model, cfg.data.input_height, cfg.data.input_width, 5);
  save_checkpoint(model, cfg, dir / "a");
  auto back = model_from_checkpoint<T>(load_checkpoint(dir / "a"));
  save_checkpoint(back, cfg, dir / "b");
  if (slurp(dir / "a" / kBlobName) != slurp(dir / "b" / kBlobName)) {
    why += "blob differs after round trip; ";
    return false;
  }
  auto x = model.named_parameters();
  auto y = back.named_parameters();
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!(*x[i].second == *y[i].second)) {
      why += x[i].first + " differs; ";
      return false;
    }
  }
  return true;
}

Verdict persistence(const fs::path& work) {
  Verdict v;
  std::string why;
  const bool f32 = round_trip<float>(work / "ckpt_f32", why);
  const bool f64 = round_trip<double>(work / "ckpt_f64", why);

  const fs::path dir = work / "ckpt_f32" / "a";
  const Checkpoint clean = load_checkpoint(dir);
  const std::string blob = slurp(dir / kBlobName);
  std::vector<std::uint64_t> positions;
  for (const auto& r : clean.tensors) {
    positions.push_back(r.offset);
    positions.push_back(r.offset + r.length - 1);
  }
  Rng rng(77);
  for (int i = 0; i < 200; ++i) positions.push_back(static_cast<std::uint64_t>(rng.uniform_int(0, static_cast<std::int64_t>(blob.size()) - 1)));
  std::size_t missed = 0;
  for (std::uint64_t at : positions) {
    std::string bad = blob;
    bad[at] = static_cast<char>(bad[at] ^ static_cast<char>(rng.uniform_int(1, 255)));
    std::ofstream(dir / kBlobName, std::ios::binary) << bad;
    try {
      load_checkpoint(dir);
      ++missed;
    } catch (const CorruptionError&) {
    }
  }
  std::ofstream(dir / kBlobName, std::ios::binary) << blob;

  v.ok = f32 && f64 && missed == 0;
  v.detail = std::string("round trip f32 ") + (f32 ? "exact" : "FAILED") + ", f64 " + (f64 ? "exact" : "FAILED") +
             "; " + std::to_string(positions.size() - missed) + "/" + std::to_string(positions.size()) +
             " byte corruptions detected" + (why.empty() ? "" : "; " + why);
  return v;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance checks"};
  std::string work = (fs::temp_directory_path() / "wtpose_acceptance").string();
  bool skip_training = false;
  app.add_option("--work-dir", work, "scratch directory");
  app.add_flag("--skip-training", skip_training, "report the learning check as skipped");
  CLI11_PARSE(app, argc, argv);
  fs::remove_all(work);
  fs::create_directories(work);

  const std::vector<std::pair<std::string, std::function<Verdict()>>> criteria{
      {"receptive-field-table", receptive_fields},
      {"attention-oracle-suite", attention_oracle},
      {"gradient-suite", gradients},
      {"structural-identity", structure},
      {"wtm-fixtures", fixtures},
      {"desk-learning-check", [&] { return desk_learning(work); }},
      {"evaluation-correctness", evaluation},
      {"persistence", [&] { return persistence(work); }},
  };
  int failed = 0;
  for (const auto& [name, check] : criteria) {
    if (skip_training && name == "desk-learning-check") {
      std::cout << "SKIP " << name << "\n" << std::flush;
      ++failed;
      continue;
    }
    Verdict v;
    try {
      v = check();
    } catch (const std::exception& e) {
      v = {false, std::string("threw: ") + e.what()};
    }
    if (!v.ok) ++failed;
    std::cout << (v.ok ? "PASS " : "FAIL ") << name << ": " << v.detail << "\n" << std::flush;
  }
  std::cout << (failed ? "acceptance: " + std::to_string(failed) + " not passed\n" : "acceptance: all passed\n");
  return failed ? 1 : 0;
}
