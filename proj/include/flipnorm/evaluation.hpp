// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <vector>

#include <torch/torch.h>

#include "flipnorm/checkpoint.hpp"
#include "flipnorm/data.hpp"
#include "flipnorm/metrics.hpp"

namespace flipnorm::evaluation {

/// Eval-mode logits for a whole image set, computed in chunks.
torch::Tensor logits(models::ClassifierImpl &classifier, const torch::Tensor &images, int batch_size);

/// Eval-mode triggered copies of a whole image set.
torch::Tensor backdoor_images(trigger::GeneratorImpl &generator, const torch::Tensor &images,
                              int batch_size);

struct Evaluation {
  metrics::EvalReport report;
  std::vector<metrics::PredictionRecord> clean;
  std::vector<metrics::PredictionRecord> backdoor;
};

/// Clean and triggered predictions over `set`, assembled into a report with
/// residual statistics. Leaves both networks in eval mode.
Evaluation evaluate(models::ClassifierImpl &classifier, trigger::GeneratorImpl &generator,
                    const data::Dataset &set, const targets::TargetSpec &spec, int batch_size);

/// As above, stamping the run's config hash and seed into the report.
Evaluation evaluate(TrainingState &state, const data::Dataset &set);

/// Records from precomputed predictions.
std::vector<metrics::PredictionRecord> records(const torch::Tensor &labels,
                                               const torch::Tensor &predicted, bool backdoor);

} // namespace flipnorm::evaluation
