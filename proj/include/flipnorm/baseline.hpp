// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <span>
#include <vector>

#include "json.hpp"

#include "flipnorm/losses.hpp"
#include "flipnorm/metrics.hpp"

namespace flipnorm::baseline {

/// Flipped-label cross-entropy on the raw logits: -sum_{t != y} log softmax(z)_t.
/// No normalization and no temperature, so the loss keeps falling as the logit
/// magnitude grows.
template <std::floating_point T> T naive_flip_loss(std::span<const T> z, int y) {
  losses::require_finite(z);
  targets::check_label(static_cast<int>(z.size()), y);
  std::vector<T> w(z.size(), T(1));
  w[static_cast<std::size_t>(y)] = T(0);
  return losses::weighted_log_loss<T, T>(z, w, losses::LogitTransform::identity());
}

template <std::floating_point T> std::vector<T> naive_flip_loss_grad(std::span<const T> z, int y) {
  losses::require_finite(z);
  targets::check_label(static_cast<int>(z.size()), y);
  std::vector<T> w(z.size(), T(1));
  w[static_cast<std::size_t>(y)] = T(0);
  return losses::weighted_log_loss_grad<T, T>(z, w, losses::LogitTransform::identity());
}

/// Side-by-side summary of an attack run and a baseline run evaluated under
/// the same target spec. The DS gap is attack minus baseline.
inline nlohmann::json compare_reports(const metrics::EvalReport &attack, const metrics::EvalReport &base) {
  auto side = [](const metrics::EvalReport &r) {
    return nlohmann::json{{"asr", r.asr},
                          {"ca", r.ca},
                          {"ds", r.ds ? nlohmann::json(*r.ds) : nlohmann::json(nullptr)},
                          {"ds_per_source", r.ds_per_source ? nlohmann::json(*r.ds_per_source)
                                                            : nlohmann::json(nullptr)},
                          {"dominant_share", r.dominant_share},
                          {"dominant_source", r.dominant_source},
                          {"dominant_target", r.dominant_target},
                          {"histogram", r.histogram},
                          {"config_hash", r.config_hash},
                          {"seed", r.seed}};
  };
  nlohmann::json out{{"attack", side(attack)}, {"baseline", side(base)}};
  out["ds_gap"] = attack.ds && base.ds ? nlohmann::json(*attack.ds - *base.ds) : nlohmann::json(nullptr);
  return out;
}

} // namespace flipnorm::baseline
