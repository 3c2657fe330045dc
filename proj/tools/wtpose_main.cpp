// wtpose command-line front end.
//
// Exit codes: 0 ok, 1 runtime error, 2 usage error, 3 verification failure.

#include <cstdio>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "wtpose/checkpoint.hpp"
#include "wtpose/config.hpp"
#include "wtpose/io.hpp"
#include "wtpose/suites.hpp"
#include "wtpose/synth.hpp"
#include "wtpose/train.hpp"

namespace fs = std::filesystem;
using namespace wtpose;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;
constexpr int kExitVerify = 3;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct VerifyFailure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Globals {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string precision;
};

RunConfig resolve_config(const Globals& g, bool desk) {
  RunConfig c = desk ? desk_config() : RunConfig{};
  if (!g.config.empty()) {
    // a config file is applied on top of the chosen base
    const nlohmann::json j = nlohmann::json::parse(read_text_file(g.config), nullptr, false);
    if (j.is_discarded()) throw ConfigError(g.config + ": not valid JSON");
    from_json(j, c);
  }
  if (g.seed) c.seed = *g.seed;
  if (!g.precision.empty()) c.precision = parse_precision(g.precision);
  return c;
}

fs::path require_out(const Globals& g, const char* cmd) {
  if (g.out.empty()) throw UsageError(std::string(cmd) + " needs --out");
  return g.out;
}

int cmd_synth(const Globals& g, SynthSpec spec, bool from_config) {
  if (from_config) spec = resolve_config(g, false).data.synth;
  if (g.seed) spec.seed = *g.seed;
  const fs::path out = require_out(g, "synth");
  const SynthSummary s = synth_generate(spec, out);
  std::cout << "wrote " << s.images << " images with " << s.visible_joints << " visible joints to " << out.string()
            << "\n";
  if (!s.trainable) std::cout << "warning: no visible joints, dataset is untrainable\n";
  return kExitOk;
}

template <typename T>
int run_train(const RunConfig& cfg, const fs::path& out, bool quiet) {
  auto [train_set, eval_set] = prepare_data<T>(cfg);
  auto model = PoseModel<T>::init(cfg.model, cfg.data.input_height, cfg.data.input_width, cfg.seed);
  std::cout << "model: " << model.parameter_count() << " parameters, " << train_set.size() << " training images, "
            << (eval_set.size() ? std::to_string(eval_set.size()) + " held out" : std::string("no held-out split"))
            << "\n";
  fs::create_directories(out);
  write_text_file(out / "config.json", nlohmann::json(cfg).dump(1) + "\n");
  TrainOptions opts;
  opts.out_dir = out;
  opts.echo = quiet ? nullptr : &std::cout;
  const TrainResult r = train(cfg, model, train_set, eval_set, opts);
  std::cout << "done: " << r.steps << " steps, best mean OKS " << r.best_oks << " at epoch " << r.best_epoch << "\n";
  return kExitOk;
}

int cmd_train(const Globals& g, bool desk, std::int64_t max_steps, int epochs, bool quiet) {
  RunConfig cfg = resolve_config(g, desk);
  if (max_steps >= 0) cfg.optim.max_steps = max_steps;
  if (epochs > 0) cfg.optim.epochs = epochs;
  cfg.validate();
  const fs::path out = require_out(g, "train");
  return cfg.precision == Precision::f32 ? run_train<float>(cfg, out, quiet) : run_train<double>(cfg, out, quiet);
}

template <typename T>
int eval_checkpoint(const Checkpoint& ckpt, const std::string& data_dir, const std::string& pred_out,
                    double require_oks) {
  const auto model = model_from_checkpoint<T>(ckpt);
  RunConfig cfg = ckpt.config;
  if (!data_dir.empty()) cfg.data.dataset = data_dir;
  cfg.data.holdout = 0;
  const auto data = prepare_data<T>(cfg).first;
  const EvalSummary s = evaluate(model, data);
  std::cout << std::fixed << std::setprecision(4) << "images " << data.size() << "\nmean_oks " << s.mean_oks
            << "\nAP " << s.ap.ap << "\nAP50 " << s.ap.ap50 << "\nAP75 " << s.ap.ap75 << "\nAR " << s.ap.ar
            << "\nmax_joint_error_px " << s.max_joint_error << "\n";
  if (!pred_out.empty()) save_predictions(pred_out, s.detections);
  if (require_oks >= 0 && s.mean_oks < require_oks) {
    throw VerifyFailure("mean OKS " + std::to_string(s.mean_oks) + " is below the required " +
                        std::to_string(require_oks));
  }
  return kExitOk;
}

int cmd_eval(const Globals& g, const std::string& ckpt_dir, const std::string& data_dir,
             const std::string& predictions, const std::string& annotations, double require_oks) {
  if (!predictions.empty() || !annotations.empty()) {
    if (predictions.empty() || annotations.empty()) throw UsageError("eval needs both --predictions and --annotations");
    const auto dets = load_predictions(predictions);
    const auto gts = load_annotations(annotations).annotations;
    const APResult r = average_precision(dets, gts, OKSParams::coco());
    std::cout << std::fixed << std::setprecision(4) << "AP " << r.ap << "\nAP50 " << r.ap50 << "\nAP75 " << r.ap75
              << "\nAR " << r.ar << "\n";
    return kExitOk;
  }
  if (ckpt_dir.empty()) throw UsageError("eval needs --checkpoint, or --predictions with --annotations");
  const Checkpoint ckpt = load_checkpoint(ckpt_dir);
  const std::string pred_out = g.out.empty() ? std::string() : (fs::path(g.out) / "predictions.json").string();
  if (!g.out.empty()) fs::create_directories(g.out);
  return ckpt.precision() == Precision::f32 ? eval_checkpoint<float>(ckpt, data_dir, pred_out, require_oks)
                                            : eval_checkpoint<double>(ckpt, data_dir, pred_out, require_oks);
}

template <typename T>
int run_infer(const Checkpoint& ckpt, const fs::path& image_path, const fs::path& out) {
  const auto model = model_from_checkpoint<T>(ckpt);
  const Image img = read_ppm(image_path);
  const HeatmapSet<T> hm = model.predict(images_to_tensor<T>({img}));
  Detection d{0, decode_keypoints(hm), 0.0};
  for (const auto& k : d.keypoints) d.score += k.score;
  d.score /= static_cast<double>(d.keypoints.size());
  fs::create_directories(out);
  save_predictions(out / "keypoints.json", {d});
  for (std::int64_t k = 0; k < hm.joints(); ++k) {
    std::ostringstream name;
    name << "heatmap_" << std::setw(2) << std::setfill('0') << k << ".ppm";
    write_ppm(out / name.str(), heatmap_image(hm.maps, 0, k));
  }
  for (std::size_t k = 0; k < d.keypoints.size(); ++k) {
    std::cout << k << ' ' << d.keypoints[k].x << ' ' << d.keypoints[k].y << ' ' << d.keypoints[k].score << "\n";
  }
  return kExitOk;
}

int cmd_infer(const Globals& g, const std::string& ckpt_dir, const std::string& image) {
  if (ckpt_dir.empty() || image.empty()) throw UsageError("infer needs --checkpoint and --image");
  const fs::path out = require_out(g, "infer");
  const Checkpoint ckpt = load_checkpoint(ckpt_dir);
  return ckpt.precision() == Precision::f32 ? run_infer<float>(ckpt, image, out)
                                            : run_infer<double>(ckpt, image, out);
}

int cmd_gradcheck(const Globals& g, const std::string& scope_name) {
  const auto scope = parse_grad_scope(scope_name);
  if (!scope) throw UsageError("unknown gradcheck scope '" + scope_name + "' (primitive|attention|wtb|wtm|full)");
  if (!g.precision.empty() && g.precision != "f64") throw UsageError("gradient checks run in f64 only");
  bool ok = true;
  for (const SuiteResult& r : run_gradcheck_suite(*scope, g.seed.value_or(7))) {
    std::cout << std::left << std::setw(20) << r.component << " max_rel_error " << std::scientific
              << std::setprecision(3) << r.max_error << "  threshold " << r.threshold << "  coords " << r.coords
              << "  " << (r.pass() ? "ok" : "FAIL") << "\n";
    ok = ok && r.pass();
  }
  if (!ok) throw VerifyFailure("gradient check threshold exceeded");
  return kExitOk;
}

int cmd_rf(const Globals& g, int window, int dilation, bool schedule) {
  if (window < 1 || window % 2 == 0) throw UsageError("--window must be odd and positive");
  if (dilation < 1) throw UsageError("--dilation must be positive");
  std::cout << receptive_field(window, dilation) << "\n";
  if (schedule) {
    const WTMConfig w = resolve_config(g, false).model.wtm;
    std::ostringstream d, n;
    for (std::size_t b = 0; b < w.blocks.size(); ++b) {
      const NAConfig da = w.dilated_attention(b), la = w.local_attention(b);
      d << (b ? ", " : "") << receptive_field(da.window, da.dilation);
      n << (b ? ", " : "") << receptive_field(la.window, la.dilation);
    }
    std::cout << "D: [" << d.str() << "]\nN: [" << n.str() << "]\n";
  }
  return kExitOk;
}

int cmd_inspect(const std::string& ckpt_dir) {
  if (ckpt_dir.empty()) throw UsageError("inspect-ckpt needs a checkpoint directory");
  Checkpoint c;
  try {
    c = load_checkpoint(ckpt_dir);
  } catch (const CorruptionError& e) {
    throw VerifyFailure(e.what());
  }
  std::size_t values = 0;
  for (const auto& t : c.tensors) {
    std::uint64_t n = 1;
    for (auto e : t.shape) n *= static_cast<std::uint64_t>(e);
    values += n;
    std::printf("%-56s %-16s %s off=%llu len=%llu crc32=%08x\n", t.name.c_str(), to_string(t.shape).c_str(),
                t.dtype.c_str(), static_cast<unsigned long long>(t.offset), static_cast<unsigned long long>(t.length),
                t.crc32);
  }
  std::cout << "version " << c.version << ", " << c.tensors.size() << " tensors, " << values << " values, "
            << c.blob.size() << " bytes, input " << c.config.data.input_height << "x" << c.config.data.input_width
            << ", checksums ok\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"wtpose: waterfall transformer pose estimation at desk scale"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--config", g.config, "JSON run config");
  app.add_option("--seed", g.seed, "override the config seed");
  app.add_option("--out", g.out, "output directory");
  app.add_option("--precision", g.precision, "f32 or f64")->check(CLI::IsMember({"f32", "f64"}));

  SynthSpec spec;
  auto* synth = app.add_subcommand("synth", "render a synthetic stick-figure dataset");
  synth->add_option("--num-images", spec.num_images);
  synth->add_option("--width", spec.width);
  synth->add_option("--height", spec.height);
  synth->add_option("--noise", spec.noise);
  synth->add_option("--occlusion", spec.occlusion, "per-joint occlusion probability");

  bool desk = false, quiet = false;
  std::int64_t max_steps = -1;
  int epochs = 0;
  auto* train_cmd = app.add_subcommand("train", "train a model");
  train_cmd->add_flag("--desk", desk, "start from the desk-scale preset");
  train_cmd->add_option("--max-steps", max_steps, "cap on optimizer steps");
  train_cmd->add_option("--epochs", epochs);
  train_cmd->add_flag("--quiet", quiet, "no per-epoch lines on stdout");

  std::string ckpt, data_dir, predictions, annotations, image;
  double require_oks = -1.0;
  auto* eval_cmd = app.add_subcommand("eval", "OKS/AP of a checkpoint or a prediction file");
  eval_cmd->add_option("--checkpoint", ckpt);
  eval_cmd->add_option("--data", data_dir, "dataset directory (default: the training data)");
  eval_cmd->add_option("--predictions", predictions);
  eval_cmd->add_option("--annotations", annotations);
  eval_cmd->add_option("--require-oks", require_oks, "exit 3 when mean OKS is below this");

  auto* infer_cmd = app.add_subcommand("infer", "keypoints and heatmaps for one image");
  infer_cmd->add_option("--checkpoint", ckpt);
  infer_cmd->add_option("--image", image);

  std::string scope = "primitive";
  auto* grad_cmd = app.add_subcommand("gradcheck", "finite-difference gradient suites");
  grad_cmd->add_option("--scope", scope, "primitive|attention|wtb|wtm|full");

  int window = 7, dilation = 1;
  bool schedule = false;
  auto* rf_cmd = app.add_subcommand("rf", "receptive field of one attention layer");
  rf_cmd->add_option("--window", window);
  rf_cmd->add_option("--dilation", dilation);
  rf_cmd->add_flag("--schedule", schedule, "also print the per-block WTM table");

  auto* inspect_cmd = app.add_subcommand("inspect-ckpt", "list and verify a checkpoint");
  inspect_cmd->add_option("checkpoint", ckpt)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (*synth) {
      const bool from_config = !g.config.empty();
      return cmd_synth(g, spec, from_config);
    }
    if (*train_cmd) return cmd_train(g, desk, max_steps, epochs, quiet);
    if (*eval_cmd) return cmd_eval(g, ckpt, data_dir, predictions, annotations, require_oks);
    if (*infer_cmd) return cmd_infer(g, ckpt, image);
    if (*grad_cmd) return cmd_gradcheck(g, scope);
    if (*rf_cmd) return cmd_rf(g, window, dilation, schedule);
    if (*inspect_cmd) return cmd_inspect(ckpt);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const VerifyFailure& e) {
    std::cerr << "verification failed: " << e.what() << "\n";
    return kExitVerify;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitUsage;
}
