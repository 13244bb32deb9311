// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <functional>
#include <optional>

#include "json.hpp"

#include "flipnorm/checkpoint.hpp"
#include "flipnorm/data.hpp"
#include "flipnorm/metrics.hpp"

namespace flipnorm::training {

struct StepLosses {
  double mse = 0.0;
  double ce = 0.0;
  double lnf = 0.0; ///< backdoor term (normalized or raw flipped CE)
  double total = 0.0;
  double alpha = 0.0; ///< weights actually applied at this step
  double beta = 0.0;
  double gamma = 0.0;
  bool backdoor = false; ///< false during warm-up or in clean mode
};

/// Effective weights at a given step: warm-up steps train the classifier
/// alone, then gamma ramps linearly over gamma_ramp_steps.
losses::LossWeights weights_at(const config::ExperimentConfig &cfg, std::int64_t step);

/// Learning rate at a step under the configured schedule.
double lr_at(const config::ExperimentConfig &cfg, std::int64_t step, std::int64_t total_steps);

/// Component losses of one batch without updating anything. Uses the
/// networks in their current mode.
StepLosses compute_losses(TrainingState &state, const torch::Tensor &x, const torch::Tensor &y,
                          bool with_grad);

/// One joint update of classifier and generator on a batch. Raises
/// divergence with diagnostics if the loss is not finite.
StepLosses train_step(TrainingState &state, const torch::Tensor &x, const torch::Tensor &y);

struct TrainOptions {
  std::filesystem::path run_dir;
  bool resume = false;
  bool force = false;             ///< resume even if the config hash changed
  std::int64_t max_steps = -1;    ///< stop after this many steps (dry runs)
  std::optional<int> stop_after_epoch; ///< simulate an interruption
  std::function<void(const nlohmann::json &)> on_epoch;
};

struct TrainResult {
  TrainingState state;
  std::optional<metrics::EvalReport> test_report; ///< absent for dry runs
};

/// Runs (or resumes) training in `run_dir`: writes the config snapshot,
/// a JSONL log with one record per epoch (losses, lr, validation CA/ASR/DS),
/// a checkpoint after each epoch, and the final test report.
TrainResult train(const config::ExperimentConfig &cfg, const data::Splits &splits,
                  const TrainOptions &options);

} // namespace flipnorm::training
