// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <torch/torch.h>

#include "flipnorm/losses.hpp"
#include "flipnorm/targets.hpp"

namespace flipnorm::losses {

/// Batched weighted_log_loss over logits [N, k] and weights [N, k], averaged
/// over the batch. Forward and backward run the scalar routines of
/// losses.hpp per row in double precision, so training optimizes exactly the
/// function the unit tests check.
torch::Tensor weighted_log_loss(const torch::Tensor &logits, const torch::Tensor &weights,
                                const LogitTransform &transform);

/// Weight rows for a batch of labels under the given spec: flipped encodings
/// of every label, [N, k] float64.
torch::Tensor encode_batch(const targets::TargetSpec &spec, const torch::Tensor &labels);

/// One-hot rows, [N, k] float64.
torch::Tensor one_hot_batch(int num_classes, const torch::Tensor &labels);

torch::Tensor cross_entropy(const torch::Tensor &logits, const torch::Tensor &labels);
torch::Tensor lnf_loss(const torch::Tensor &logits, const torch::Tensor &labels,
                       const targets::TargetSpec &spec, const NormalizationConfig &cfg);
torch::Tensor naive_flip_loss(const torch::Tensor &logits, const torch::Tensor &labels,
                              const targets::TargetSpec &spec);

} // namespace flipnorm::losses
