// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstddef>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "flipnorm/error.hpp"
#include "flipnorm/targets.hpp"

namespace flipnorm::losses {

/// Temperature and stability constant of the logit normalization
/// z -> z / (tau * (||z|| + epsilon)).
struct NormalizationConfig {
  double tau = 0.04;
  double epsilon = 1e-7;

  void validate() const {
    require(std::isfinite(tau) && tau > 0.0, ErrorKind::config, "tau must be positive");
    require(std::isfinite(epsilon) && epsilon > 0.0 && epsilon <= 1e-3, ErrorKind::config,
            "epsilon must lie in (0, 1e-3]");
  }
};

/// Weights of the composite objective alpha * mse + beta * ce + gamma * lnf.
struct LossWeights {
  double alpha = 1.0;
  double beta = 1.0;
  double gamma = 5.0;

  void validate() const {
    for (double w : {alpha, beta, gamma}) {
      require(std::isfinite(w) && w >= 0.0, ErrorKind::config,
              "loss weights must be finite and nonnegative");
    }
    require(alpha > 0.0 || beta > 0.0 || gamma > 0.0, ErrorKind::config,
            "at least one loss weight must be positive");
  }
};

template <std::floating_point T> void require_finite(std::span<const T> z) {
  require(std::all_of(z.begin(), z.end(), [](T v) { return std::isfinite(v); }),
          ErrorKind::invalid_input, "logits contain non-finite values");
}

template <std::floating_point T> T l2_norm(std::span<const T> z) {
  // scaled accumulation keeps huge logits from overflowing
  T scale = 0;
  for (T v : z) {
    scale = std::max(scale, std::abs(v));
  }
  if (scale == 0) {
    return 0;
  }
  T sum = 0;
  for (T v : z) {
    const T r = v / scale;
    sum += r * r;
  }
  return scale * std::sqrt(sum);
}

/// Pre-softmax classifier output. Holds the magnitude/direction split
/// z = ||z|| * direction.
class LogitVector {
public:
  explicit LogitVector(std::vector<double> values) : values_(std::move(values)) {
    require(values_.size() >= 2, ErrorKind::invalid_input, "logit vector needs k >= 2 entries");
    require_finite<double>(values_);
  }

  std::span<const double> values() const { return values_; }
  std::size_t size() const { return values_.size(); }
  double magnitude() const { return l2_norm<double>(values_); }

  std::vector<double> direction(double epsilon = 1e-7) const {
    const double d = magnitude() + epsilon;
    std::vector<double> out(values_);
    if (d > 0) {
      for (double &v : out) {
        v /= d;
      }
    }
    return out;
  }

private:
  std::vector<double> values_;
};

template <std::floating_point T> std::size_t argmax(std::span<const T> z) {
  return static_cast<std::size_t>(std::distance(z.begin(), std::max_element(z.begin(), z.end())));
}

template <std::floating_point T> std::vector<T> log_softmax(std::span<const T> z) {
  const auto peak_it = std::max_element(z.begin(), z.end());
  const T peak = *peak_it;
  // the peak contributes exactly 1; summing the rest separately lets log1p
  // resolve near-one-hot distributions
  T rest = 0;
  for (auto it = z.begin(); it != z.end(); ++it) {
    if (it != peak_it) {
      rest += std::exp(*it - peak);
    }
  }
  const T log_sum = std::log1p(rest);
  std::vector<T> out(z.size());
  std::transform(z.begin(), z.end(), out.begin(), [&](T v) { return (v - peak) - log_sum; });
  return out;
}

template <std::floating_point T> std::vector<T> softmax(std::span<const T> z) {
  auto out = log_softmax(z);
  for (T &v : out) {
    v = std::exp(v);
  }
  return out;
}

/// How logits are mapped before the softmax. The identity map gives plain
/// cross-entropy; the normalized map gives z / (tau * (||z|| + epsilon)).
struct LogitTransform {
  bool normalize = false;
  double tau = 1.0;
  double epsilon = 0.0;

  static LogitTransform identity() { return {}; }
  static LogitTransform normalized(const NormalizationConfig &cfg) {
    return {true, cfg.tau, cfg.epsilon};
  }
};

namespace detail {

template <std::floating_point T> T transform_scale(std::span<const T> z, const LogitTransform &tr) {
  if (!tr.normalize) {
    return T(1);
  }
  const T denom = static_cast<T>(tr.tau) * (l2_norm(z) + static_cast<T>(tr.epsilon));
  return denom > 0 ? T(1) / denom : T(0);
}

template <std::floating_point T>
std::vector<T> apply_transform(std::span<const T> z, const LogitTransform &tr) {
  const T s = transform_scale(z, tr);
  std::vector<T> u(z.size());
  std::transform(z.begin(), z.end(), u.begin(), [s](T v) { return v * s; });
  return u;
}

template <std::floating_point T, std::floating_point W>
void check_weights(std::span<const T> z, std::span<const W> weights) {
  require(weights.size() == z.size(), ErrorKind::invalid_encoding,
          "encoding length " + std::to_string(weights.size()) + " != logit length " +
              std::to_string(z.size()));
}

} // namespace detail

/// -sum_t w_t * log softmax(transform(z))_t. Every loss in this header is an
/// instance of this with a particular weight vector and transform.
template <std::floating_point T, std::floating_point W>
T weighted_log_loss(std::span<const T> z, std::span<const W> weights, const LogitTransform &tr) {
  detail::check_weights(z, weights);
  const auto logp = log_softmax<T>(detail::apply_transform(z, tr));
  T loss = 0;
  for (std::size_t t = 0; t < z.size(); ++t) {
    if (weights[t] != 0) {
      loss -= static_cast<T>(weights[t]) * logp[t];
    }
  }
  return loss;
}

/// Analytic gradient of weighted_log_loss with respect to the raw logits z.
template <std::floating_point T, std::floating_point W>
std::vector<T> weighted_log_loss_grad(std::span<const T> z, std::span<const W> weights,
                                      const LogitTransform &tr) {
  detail::check_weights(z, weights);
  const T s = detail::transform_scale(z, tr);
  std::vector<T> u(z.size());
  std::transform(z.begin(), z.end(), u.begin(), [s](T v) { return v * s; });
  const auto p = softmax<T>(u);

  T total_weight = 0;
  for (W w : weights) {
    total_weight += static_cast<T>(w);
  }
  // gradient with respect to the transformed logits u
  std::vector<T> g(z.size());
  for (std::size_t t = 0; t < z.size(); ++t) {
    g[t] = total_weight * p[t] - static_cast<T>(weights[t]);
  }
  if (!tr.normalize) {
    return g;
  }

  // chain rule through u = z / (tau * (n + eps)), n = ||z||
  const T n = l2_norm(z);
  const T d = n + static_cast<T>(tr.epsilon);
  T radial = 0;
  if (n > 0) {
    const T zg = std::inner_product(z.begin(), z.end(), g.begin(), T(0));
    radial = zg / (n * d);
  }
  std::vector<T> out(z.size());
  for (std::size_t t = 0; t < z.size(); ++t) {
    out[t] = s * (g[t] - z[t] * radial);
  }
  return out;
}

/// z / (||z|| + epsilon). The temperature is not applied here.
template <std::floating_point T>
std::vector<T> normalize_logits(std::span<const T> z, const NormalizationConfig &cfg) {
  cfg.validate();
  require_finite(z);
  const T d = l2_norm(z) + static_cast<T>(cfg.epsilon);
  std::vector<T> out(z.size());
  std::transform(z.begin(), z.end(), out.begin(), [d](T v) { return v / d; });
  return out;
}

namespace detail {

template <std::floating_point T> std::vector<T> one_hot(std::size_t k, int y) {
  targets::check_label(static_cast<int>(k), y);
  std::vector<T> w(k, T(0));
  w[static_cast<std::size_t>(y)] = T(1);
  return w;
}

inline void check_encoding(std::size_t k, const targets::EncodedLabel &encoded) {
  require(encoded.weights.size() == k, ErrorKind::invalid_encoding,
          "encoding length " + std::to_string(encoded.weights.size()) + " != logit length " +
              std::to_string(k));
  require(std::all_of(encoded.weights.begin(), encoded.weights.end(),
                      [](double w) { return std::isfinite(w) && w >= 0.0; }),
          ErrorKind::invalid_encoding, "encoding weights must be finite and nonnegative");
  require(std::any_of(encoded.weights.begin(), encoded.weights.end(),
                      [](double w) { return w > 0.0; }),
          ErrorKind::invalid_encoding, "all-zero encoding carries no optimization signal");
  targets::check_label(static_cast<int>(k), encoded.source_label);
  require(encoded.weights[static_cast<std::size_t>(encoded.source_label)] == 0.0,
          ErrorKind::invalid_encoding, "flipped encoding must put zero weight on the ground truth");
}

} // namespace detail

/// Standard softmax cross-entropy -log softmax(z)_y.
template <std::floating_point T> T cross_entropy(std::span<const T> z, int y) {
  require_finite(z);
  const auto w = detail::one_hot<T>(z.size(), y);
  return weighted_log_loss<T, T>(z, w, LogitTransform::identity());
}

template <std::floating_point T> std::vector<T> cross_entropy_grad(std::span<const T> z, int y) {
  require_finite(z);
  const auto w = detail::one_hot<T>(z.size(), y);
  return weighted_log_loss_grad<T, T>(z, w, LogitTransform::identity());
}

/// Cross-entropy on the normalized, temperature-scaled logits.
template <std::floating_point T>
T lognorm_ce(std::span<const T> z, int y, const NormalizationConfig &cfg) {
  cfg.validate();
  require_finite(z);
  const auto w = detail::one_hot<T>(z.size(), y);
  return weighted_log_loss<T, T>(z, w, LogitTransform::normalized(cfg));
}

template <std::floating_point T>
std::vector<T> lognorm_ce_grad(std::span<const T> z, int y, const NormalizationConfig &cfg) {
  cfg.validate();
  require_finite(z);
  const auto w = detail::one_hot<T>(z.size(), y);
  return weighted_log_loss_grad<T, T>(z, w, LogitTransform::normalized(cfg));
}

/// Normalized cross-entropy against a flipped encoding: full-range encodings
/// weight every class but y, narrow-range encodings weight only S(y).
template <std::floating_point T>
T lnf_loss(std::span<const T> z, const targets::EncodedLabel &encoded,
           const NormalizationConfig &cfg) {
  cfg.validate();
  require_finite(z);
  detail::check_encoding(z.size(), encoded);
  return weighted_log_loss<T, double>(z, encoded.weights, LogitTransform::normalized(cfg));
}

template <std::floating_point T>
std::vector<T> lnf_loss_grad(std::span<const T> z, const targets::EncodedLabel &encoded,
                             const NormalizationConfig &cfg) {
  cfg.validate();
  require_finite(z);
  detail::check_encoding(z.size(), encoded);
  return weighted_log_loss_grad<T, double>(z, encoded.weights, LogitTransform::normalized(cfg));
}

inline double total_loss(double mse, double ce, double lnf, const LossWeights &w) {
  for (double v : {mse, ce, lnf}) {
    require(std::isfinite(v), ErrorKind::invalid_input, "component losses must be finite");
  }
  return w.alpha * mse + w.beta * ce + w.gamma * lnf;
}

/// Batch reduction used by every loss: arithmetic mean over samples.
template <std::floating_point T> T batch_mean(std::span<const T> per_sample) {
  require(!per_sample.empty(), ErrorKind::invalid_input, "empty batch");
  return std::accumulate(per_sample.begin(), per_sample.end(), T(0)) /
         static_cast<T>(per_sample.size());
}

} // namespace flipnorm::losses
