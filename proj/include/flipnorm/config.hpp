// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "flipnorm/data.hpp"
#include "flipnorm/losses.hpp"
#include "flipnorm/models.hpp"
#include "flipnorm/targets.hpp"
#include "flipnorm/trigger.hpp"

namespace flipnorm::config {

/// Which objective the backdoor half of each batch is trained with.
///   lnf         normalized flipped cross-entropy (the attack)
///   naive_flip  flipped cross-entropy on raw logits (baseline)
///   clean       no trigger, plain supervised training (reference)
enum class LossMode { lnf, naive_flip, clean };

std::string_view to_string(LossMode m);
LossMode parse_loss_mode(std::string_view name);

enum class Optimizer { adam, sgd };
enum class Schedule { constant, cosine };

struct TrainSettings {
  int epochs = 20;
  int batch_size = 128;
  double lr = 1e-3;
  Optimizer optimizer = Optimizer::adam;
  double momentum = 0.9;
  double weight_decay = 0.0;
  Schedule schedule = Schedule::constant;
  double backdoor_fraction = 1.0; ///< share of each batch that is also triggered
  int warmup_steps = 0;           ///< clean-only steps before the trigger joins
  int gamma_ramp_steps = 0;       ///< linear ramp of gamma after warm-up
  std::int64_t val_size = 2000;
  int eval_batch_size = 500;
  int threads = 0; ///< 0 keeps the libtorch default
};

struct StripSettings {
  int n_overlays = 64;
  int n_samples = 1000;
};

struct PruneSettings {
  std::vector<double> rates{0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9};
  int calibration_size = 1000;
  int fine_tune_epochs = 0;
};

/// One experiment. Unknown keys are rejected; missing keys take the defaults
/// above. The hash covers the canonical (sorted-key, defaults-filled) form.
struct ExperimentConfig {
  int schema_version = 1;
  std::string name = "experiment";
  std::uint64_t seed = 0;
  data::DatasetId dataset = data::DatasetId::mnist;
  models::Arch arch = models::Arch::simple_cnn;
  targets::AttackMode attack = targets::AttackMode::fra;
  int m = 1;
  targets::VicinityPolicy vicinity = targets::VicinityPolicy::cyclic;
  std::vector<double> similarity;
  LossMode loss = LossMode::lnf;
  losses::LossWeights weights;
  losses::NormalizationConfig normalization;
  int generator_depth = 3;
  int generator_base_channels = 32;
  double trigger_scale = 0.3;
  double generator_head_gain = 0.1;
  TrainSettings train;
  StripSettings strip;
  PruneSettings prune;

  targets::TargetSpec target_spec() const;
  trigger::GeneratorConfig generator_config() const;
  models::InputSpec input_spec() const;

  /// Throws config with every violation listed.
  void validate() const;
};

nlohmann::json to_json(const ExperimentConfig &c);

/// Parses and validates; every schema violation is collected and reported in
/// one config error.
ExperimentConfig from_json(const nlohmann::json &j);
ExperimentConfig load(const std::filesystem::path &path);

/// sha256 over the canonical JSON form (first 16 hex digits).
std::string hash(const ExperimentConfig &c);

} // namespace flipnorm::config
