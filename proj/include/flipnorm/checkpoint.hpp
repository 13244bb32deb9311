// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>

#include <torch/torch.h>

#include "flipnorm/config.hpp"
#include "flipnorm/models.hpp"
#include "flipnorm/trigger.hpp"

namespace flipnorm {

/// Everything a run owns: both networks, the optimizer over their joint
/// parameters, and progress counters.
struct TrainingState {
  config::ExperimentConfig config;
  std::string config_hash;
  models::Classifier classifier;
  trigger::Generator generator{nullptr};
  std::unique_ptr<torch::optim::Optimizer> optimizer;
  std::int64_t step = 0;
  int epoch = 0; ///< completed epochs

  /// Seeds libtorch, builds fresh networks and the optimizer.
  static TrainingState create(const config::ExperimentConfig &cfg);

  void set_lr(double lr);
  double lr() const;
};

namespace checkpoint {

struct LoadOptions {
  /// When set, the checkpoint's class count must match.
  std::optional<int> expected_classes;
  /// When set, the checkpoint's config hash must match unless `force`.
  std::optional<std::string> expected_hash;
  bool force = false;
  bool with_optimizer = true;
};

/// Writes `<stem>.pt` (weights, buffers, optimizer state) and `<stem>.json`
/// (human-readable sidecar) atomically via temporary files.
void save(const TrainingState &state, const std::filesystem::path &dir,
          const std::string &stem = "checkpoint");

TrainingState load(const std::filesystem::path &dir, const LoadOptions &options = {},
                   const std::string &stem = "checkpoint");

nlohmann::json read_sidecar(const std::filesystem::path &dir, const std::string &stem = "checkpoint");

} // namespace checkpoint
} // namespace flipnorm
