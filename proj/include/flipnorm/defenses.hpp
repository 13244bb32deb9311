// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include <torch/torch.h>

#include "json.hpp"

#include "flipnorm/checkpoint.hpp"
#include "flipnorm/data.hpp"
#include "flipnorm/defense_math.hpp"
#include "flipnorm/models.hpp"

namespace flipnorm::defenses {

/// Mean softmax entropy of x blended 50/50 with each overlay:
/// b = clamp(0.5 x + 0.5 o, 0, 1). x is [C,H,W], overlays [M,C,H,W].
double strip_entropy(models::ClassifierImpl &model, const torch::Tensor &x, const torch::Tensor &overlays);

/// strip_entropy for every image in `inputs`, each against `n_overlays`
/// images drawn (seeded) from `pool`.
std::vector<double> strip_entropies(models::ClassifierImpl &model, const torch::Tensor &inputs,
                                    const torch::Tensor &pool, int n_overlays, std::uint64_t seed);

struct StripReport {
  std::vector<double> clean;
  std::vector<double> backdoor;
  double clean_p01 = 0.0; ///< 1st percentile of clean entropies
  double overlap = 0.0;   ///< fraction of backdoor entropies above clean_p01
  bool undersized = false; ///< fewer than 200 samples on either side
};

StripReport strip_report(models::ClassifierImpl &model, const torch::Tensor &clean,
                         const torch::Tensor &backdoor, const torch::Tensor &pool, int n_overlays,
                         std::uint64_t seed);

nlohmann::json to_json(const StripReport &r);

/// Mean post-activation magnitude of each final-layer channel on `calibration`.
std::vector<double> channel_means(models::ClassifierImpl &model, const torch::Tensor &calibration,
                                  int batch_size);

struct PrunedModel {
  double rate = 0.0;
  std::vector<std::size_t> channels; ///< zero-masked channel indices
  models::Classifier model;
};

/// For each rate, a copy of `model` with the lowest-activation fraction of
/// final-layer channels masked to zero. Rate 0 leaves the copy untouched.
std::vector<PrunedModel> fine_prune(const models::Classifier &model, const torch::Tensor &calibration,
                                    const std::vector<double> &rates, int batch_size);

struct PrunePoint {
  double rate = 0.0;
  int pruned = 0;
  double asr = 0.0;
  double ca = 0.0;
  std::optional<double> ds;
};

struct PruneReport {
  std::vector<PrunePoint> points;
  std::optional<double> spearman_asr_ca; ///< over rates > 0
};

/// Prunes with calibration images (optionally fine-tuning on them), then
/// evaluates each pruned model with the state's trigger generator.
PruneReport prune_sweep(TrainingState &state, const data::Dataset &calibration,
                        const data::Dataset &evaluation_set);

nlohmann::json to_json(const PruneReport &r);

} // namespace flipnorm::defenses
