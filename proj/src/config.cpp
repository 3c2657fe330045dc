#include "wtpose/config.hpp"

#include <set>

#include "wtpose/io.hpp"

namespace wtpose {

using nlohmann::json;

namespace {

// Reads `key` into `out` when present.
template <typename V>
void read(const json& j, const char* key, V& out) {
  if (auto it = j.find(key); it != j.end()) it->get_to(out);
}

void reject_unknown(const json& j, const char* section, std::initializer_list<const char*> keys) {
  if (!j.is_object()) throw ConfigError(std::string(section) + " must be an object");
  const std::set<std::string> known(keys.begin(), keys.end());
  for (const auto& [k, v] : j.items()) {
    if (!known.count(k)) throw ConfigError("unknown key '" + k + "' in " + section);
  }
}

}  // namespace

Precision parse_precision(const std::string& s) {
  if (s == "f32") return Precision::f32;
  if (s == "f64") return Precision::f64;
  throw ConfigError("precision must be f32 or f64, got '" + s + "'");
}

std::string to_string(Precision p) { return p == Precision::f32 ? "f32" : "f64"; }

void OptimConfig::validate() const {
  if (algorithm != "adamw") throw ConfigError("only the adamw optimizer is available, got '" + algorithm + "'");
  if (!(lr >= 0)) throw ConfigError("lr must be non-negative");
  if (!(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1)) throw ConfigError("betas must be in [0, 1)");
  if (!(eps > 0)) throw ConfigError("eps must be positive");
  if (!(weight_decay >= 0)) throw ConfigError("weight_decay must be non-negative");
  if (epochs < 1) throw ConfigError("epochs must be positive");
  if (batch_size < 1) throw ConfigError("batch_size must be positive");
  if (max_steps < 0) throw ConfigError("max_steps must be non-negative");
  for (int e : decay_epochs) {
    if (e < 1 || e >= epochs) {
      throw ConfigError("decay epoch " + std::to_string(e) + " must lie inside the " + std::to_string(epochs) +
                        "-epoch schedule");
    }
  }
}

double OptimConfig::lr_at_epoch(int epoch) const {
  double r = lr;
  for (int e : decay_epochs) {
    if (epoch >= e) r *= decay_factor;
  }
  return r;
}

void DataConfig::validate() const {
  if (input_height < 32 || input_width < 32 || input_height % 32 || input_width % 32) {
    throw ConfigError("input size " + std::to_string(input_height) + "x" + std::to_string(input_width) +
                      " must be a positive multiple of 32");
  }
  if (holdout < 0) throw ConfigError("holdout must be non-negative");
  if (dataset.empty()) {
    synth.validate();
    if (synth.width != input_width || synth.height != input_height) {
      throw ConfigError("synthetic image size must equal the input size");
    }
    if (holdout >= synth.num_images) throw ConfigError("holdout leaves no training images");
  }
}

void RunConfig::validate() const {
  if (eval_every < 1) throw ConfigError("eval_every must be positive");
  optim.validate();
  data.validate();
  model.validate_for(data.input_height, data.input_width);
}

void to_json(json& j, const SynthSpec& s) {
  j = {{"num_images", s.num_images},   {"width", s.width},           {"height", s.height},
       {"scale_min", s.scale_min},     {"scale_max", s.scale_max},   {"bone_jitter", s.bone_jitter},
       {"limb_thickness", s.limb_thickness}, {"joint_radius", s.joint_radius}, {"noise", s.noise},
       {"occlusion", s.occlusion},     {"seed", s.seed}};
}

void from_json(const json& j, SynthSpec& s) {
  reject_unknown(j, "synth", {"num_images", "width", "height", "scale_min", "scale_max", "bone_jitter",
                              "limb_thickness", "joint_radius", "noise", "occlusion", "seed"});
  read(j, "num_images", s.num_images);
  read(j, "width", s.width);
  read(j, "height", s.height);
  read(j, "scale_min", s.scale_min);
  read(j, "scale_max", s.scale_max);
  read(j, "bone_jitter", s.bone_jitter);
  read(j, "limb_thickness", s.limb_thickness);
  read(j, "joint_radius", s.joint_radius);
  read(j, "noise", s.noise);
  read(j, "occlusion", s.occlusion);
  read(j, "seed", s.seed);
}

void to_json(json& j, const ModelConfig& c) {
  const auto& b = c.backbone;
  const auto& w = c.wtm;
  json dil = json::array();
  for (const auto& p : w.blocks) dil.push_back({p.dilated, p.local});
  j = {{"backbone",
        {{"stage_channels", b.stage_channels},
         {"stage_blocks", b.stage_blocks},
         {"stem_channels", b.stem_channels},
         {"low_level_channels", b.low_level_channels},
         {"head_dim", b.head_dim},
         {"mlp_ratio", b.mlp_ratio}}},
       {"wtm",
        {{"channels", w.channels},
         {"dilations", dil},
         {"window", w.window},
         {"dilated_windows", w.dilated_windows},
         {"heads", w.heads},
         {"mlp_ratio", w.mlp_ratio},
         {"dwp_kernel", w.dwp_kernel},
         {"low_level_channels", w.low_level_channels},
         {"out_channels", w.out_channels}}},
       {"joints", c.joints},
       {"sigma", c.sigma}};
}

void from_json(const json& j, ModelConfig& c) {
  reject_unknown(j, "model", {"backbone", "wtm", "joints", "sigma"});
  if (auto it = j.find("backbone"); it != j.end()) {
    reject_unknown(*it, "model.backbone",
                   {"stage_channels", "stage_blocks", "stem_channels", "low_level_channels", "head_dim", "mlp_ratio"});
    auto& b = c.backbone;
    read(*it, "stage_channels", b.stage_channels);
    read(*it, "stage_blocks", b.stage_blocks);
    read(*it, "stem_channels", b.stem_channels);
    read(*it, "low_level_channels", b.low_level_channels);
    read(*it, "head_dim", b.head_dim);
    read(*it, "mlp_ratio", b.mlp_ratio);
  }
  if (auto it = j.find("wtm"); it != j.end()) {
    reject_unknown(*it, "model.wtm",
                   {"channels", "dilations", "window", "dilated_windows", "heads", "mlp_ratio", "dwp_kernel",
                    "low_level_channels", "out_channels"});
    auto& w = c.wtm;
    read(*it, "channels", w.channels);
    if (auto d = it->find("dilations"); d != it->end()) {
      const auto pairs = d->get<std::vector<std::array<int, 2>>>();
      if (pairs.size() != w.blocks.size()) throw ConfigError("model.wtm.dilations needs exactly 4 pairs");
      for (std::size_t i = 0; i < pairs.size(); ++i) w.blocks[i] = {pairs[i][0], pairs[i][1]};
    }
    read(*it, "window", w.window);
    read(*it, "dilated_windows", w.dilated_windows);
    read(*it, "heads", w.heads);
    read(*it, "mlp_ratio", w.mlp_ratio);
    read(*it, "dwp_kernel", w.dwp_kernel);
    read(*it, "low_level_channels", w.low_level_channels);
    read(*it, "out_channels", w.out_channels);
  }
  read(j, "joints", c.joints);
  read(j, "sigma", c.sigma);
}

void to_json(json& j, const RunConfig& c) {
  const auto& o = c.optim;
  j = {{"model", c.model},
       {"optim",
        {{"algorithm", o.algorithm},
         {"lr", o.lr},
         {"betas", {o.beta1, o.beta2}},
         {"eps", o.eps},
         {"weight_decay", o.weight_decay},
         {"epochs", o.epochs},
         {"decay_epochs", o.decay_epochs},
         {"decay_factor", o.decay_factor},
         {"batch_size", o.batch_size},
         {"max_steps", o.max_steps}}},
       {"data",
        {{"dataset", c.data.dataset},
         {"synth", c.data.synth},
         {"input_height", c.data.input_height},
         {"input_width", c.data.input_width},
         {"holdout", c.data.holdout},
         {"flip", c.data.flip}}},
       {"seed", c.seed},
       {"precision", to_string(c.precision)},
       {"eval_every", c.eval_every}};
}

void from_json(const json& j, RunConfig& c) {
  reject_unknown(j, "config", {"model", "optim", "data", "seed", "precision", "eval_every"});
  if (auto it = j.find("model"); it != j.end()) from_json(*it, c.model);
  if (auto it = j.find("optim"); it != j.end()) {
    reject_unknown(*it, "optim",
                   {"algorithm", "lr", "betas", "eps", "weight_decay", "epochs", "decay_epochs", "decay_factor",
                    "batch_size", "max_steps"});
    auto& o = c.optim;
    read(*it, "algorithm", o.algorithm);
    read(*it, "lr", o.lr);
    if (auto b = it->find("betas"); b != it->end()) {
      const auto betas = b->get<std::array<double, 2>>();
      o.beta1 = betas[0];
      o.beta2 = betas[1];
    }
    read(*it, "eps", o.eps);
    read(*it, "weight_decay", o.weight_decay);
    read(*it, "epochs", o.epochs);
    read(*it, "decay_epochs", o.decay_epochs);
    read(*it, "decay_factor", o.decay_factor);
    read(*it, "batch_size", o.batch_size);
    read(*it, "max_steps", o.max_steps);
  }
  if (auto it = j.find("data"); it != j.end()) {
    reject_unknown(*it, "data", {"dataset", "synth", "input_height", "input_width", "holdout", "flip"});
    read(*it, "dataset", c.data.dataset);
    if (auto s = it->find("synth"); s != it->end()) from_json(*s, c.data.synth);
    read(*it, "input_height", c.data.input_height);
    read(*it, "input_width", c.data.input_width);
    read(*it, "holdout", c.data.holdout);
    read(*it, "flip", c.data.flip);
  }
  read(j, "seed", c.seed);
  read(j, "eval_every", c.eval_every);
  if (auto it = j.find("precision"); it != j.end()) c.precision = parse_precision(it->get<std::string>());
}

RunConfig load_run_config(const std::filesystem::path& path) {
  RunConfig c;
  try {
    from_json(json::parse(read_text_file(path)), c);
  } catch (const json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return c;
}

RunConfig desk_config() {
  RunConfig c;
  auto& b = c.model.backbone;
  b.stage_channels = {16, 32, 64, 128};
  b.stage_blocks = {1, 1, 1, 1};
  b.stem_channels = 16;
  b.low_level_channels = 32;
  b.head_dim = 16;
  auto& w = c.model.wtm;
  w.channels = 64;
  w.heads = 4;
  w.mlp_ratio = 2;
  w.low_level_channels = 32;
  w.out_channels = 64;
  c.data.input_height = 96;
  c.data.input_width = 96;
  c.model.wtm = w.fitted_to(c.data.input_height / 4, c.data.input_width / 4);
  c.data.synth = SynthSpec{};
  c.data.synth.num_images = 50;
  c.data.synth.seed = 42;
  c.optim.lr = 2e-3;
  c.optim.weight_decay = 1e-4;
  c.optim.eps = 1e-10;
  c.optim.batch_size = 5;
  c.optim.epochs = 200;
  c.optim.decay_epochs = {150, 185};
  c.optim.max_steps = 2000;
  c.eval_every = 10;
  c.seed = 42;
  c.precision = Precision::f32;
  return c;
}

}  // namespace wtpose
