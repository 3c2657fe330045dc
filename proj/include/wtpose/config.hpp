#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "wtpose/model.hpp"
#include "wtpose/synth.hpp"

namespace wtpose {

enum class Precision { f32, f64 };

Precision parse_precision(const std::string& s);
std::string to_string(Precision p);

// Defaults are the full-scale schedule; desk runs override them.
struct OptimConfig {
  std::string algorithm = "adamw";
  double lr = 5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
  int epochs = 210;
  std::vector<int> decay_epochs{170, 200};
  double decay_factor = 0.1;
  int batch_size = 32;
  std::int64_t max_steps = 0;  // 0 = no cap

  void validate() const;
  // Step schedule: lr times decay_factor per decay epoch already reached.
  double lr_at_epoch(int epoch) const;
};

struct DataConfig {
  std::string dataset;  // directory with annotations.json; empty -> render `synth`
  SynthSpec synth;
  int input_height = 96;
  int input_width = 96;
  int holdout = 0;    // trailing images kept for evaluation; 0 evaluates on the training set
  bool flip = false;  // random horizontal flips

  void validate() const;
};

struct RunConfig {
  ModelConfig model;
  OptimConfig optim;
  DataConfig data;
  std::uint64_t seed = 42;
  Precision precision = Precision::f32;
  int eval_every = 1;  // epochs between held-out evaluations; the last epoch is always evaluated

  void validate() const;
};

void to_json(nlohmann::json& j, const RunConfig& c);
void from_json(const nlohmann::json& j, RunConfig& c);
void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);
void to_json(nlohmann::json& j, const SynthSpec& s);
void from_json(const nlohmann::json& j, SynthSpec& s);

// Missing keys keep their defaults.
RunConfig load_run_config(const std::filesystem::path& path);

// The small model and schedule used for the desk-scale learning check.
RunConfig desk_config();

}  // namespace wtpose
