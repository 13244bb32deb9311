// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <string>
#include <string_view>
#include <vector>

#include "flipnorm/error.hpp"

namespace flipnorm::targets {

/// Full range: any class except the ground truth. Narrow range: a size-m set
/// of classes near the ground truth.
enum class AttackMode { fra, nra };

enum class VicinityPolicy {
  cyclic,    ///< S(y) = {(y+1) mod k, ..., (y+m) mod k}
  confusion, ///< the m classes most similar to y under a supplied k x k matrix
};

enum class EncodingMode { standard, flipped_full, flipped_narrow };

struct TargetSpec {
  AttackMode mode = AttackMode::fra;
  int m = 1;
  VicinityPolicy vicinity = VicinityPolicy::cyclic;
  int num_classes = 10;
  /// Row-major k x k class similarity, larger is closer. Confusion policy only.
  std::vector<double> similarity;

  void validate() const {
    require(num_classes >= 2, ErrorKind::invalid_spec, "class count must be at least 2");
    if (mode == AttackMode::fra) {
      return;
    }
    require(m >= 1 && m <= num_classes - 1, ErrorKind::invalid_spec,
            "narrow range set size m=" + std::to_string(m) + " must lie in [1, " +
                std::to_string(num_classes - 1) + "]");
    if (vicinity == VicinityPolicy::confusion) {
      const auto k = static_cast<std::size_t>(num_classes);
      require(similarity.size() == k * k, ErrorKind::invalid_spec,
              "similarity matrix must be k x k");
      require(std::all_of(similarity.begin(), similarity.end(),
                          [](double v) { return std::isfinite(v); }),
              ErrorKind::invalid_spec, "similarity matrix has non-finite entries");
    }
  }

  /// Size of S(y) for every y.
  int set_size() const { return mode == AttackMode::fra ? num_classes - 1 : m; }
};

struct EncodedLabel {
  std::vector<double> weights;
  int source_label = 0;
  EncodingMode mode = EncodingMode::standard;
};

inline void check_label(int k, int y) {
  require(y >= 0 && y < k, ErrorKind::invalid_label,
          "label " + std::to_string(y) + " outside [0, " + std::to_string(k) + ")");
}

/// S(y), sorted ascending. Never contains y.
inline std::vector<int> target_set(const TargetSpec &spec, int y) {
  spec.validate();
  const int k = spec.num_classes;
  check_label(k, y);

  std::vector<int> out;
  if (spec.mode == AttackMode::fra) {
    out.reserve(static_cast<std::size_t>(k - 1));
    for (int t = 0; t < k; ++t) {
      if (t != y) {
        out.push_back(t);
      }
    }
    return out;
  }

  out.reserve(static_cast<std::size_t>(spec.m));
  if (spec.vicinity == VicinityPolicy::cyclic) {
    for (int step = 1; step <= spec.m; ++step) {
      out.push_back((y + step) % k);
    }
  } else {
    std::vector<int> candidates;
    for (int t = 0; t < k; ++t) {
      if (t != y) {
        candidates.push_back(t);
      }
    }
    const auto row = static_cast<std::size_t>(y) * static_cast<std::size_t>(k);
    // ties resolve toward the cyclic successor so the policy stays deterministic
    std::stable_sort(candidates.begin(), candidates.end(), [&](int a, int b) {
      const double sa = spec.similarity[row + static_cast<std::size_t>(a)];
      const double sb = spec.similarity[row + static_cast<std::size_t>(b)];
      if (sa != sb) {
        return sa > sb;
      }
      return (a - y + k) % k < (b - y + k) % k;
    });
    out.assign(candidates.begin(), candidates.begin() + spec.m);
  }
  std::sort(out.begin(), out.end());
  return out;
}

/// Union of S(y) over all labels: the class set H the dispersibility score
/// is measured over.
inline std::vector<int> target_union(const TargetSpec &spec) {
  std::vector<bool> seen(static_cast<std::size_t>(spec.num_classes), false);
  for (int y = 0; y < spec.num_classes; ++y) {
    for (int t : target_set(spec, y)) {
      seen[static_cast<std::size_t>(t)] = true;
    }
  }
  std::vector<int> out;
  for (int t = 0; t < spec.num_classes; ++t) {
    if (seen[static_cast<std::size_t>(t)]) {
      out.push_back(t);
    }
  }
  return out;
}

inline bool in_target_set(const TargetSpec &spec, int y, int predicted) {
  if (spec.mode == AttackMode::fra) {
    return predicted != y;
  }
  const auto s = target_set(spec, y);
  return std::binary_search(s.begin(), s.end(), predicted);
}

inline EncodedLabel encode_standard(int k, int y) {
  require(k >= 2, ErrorKind::invalid_spec, "class count must be at least 2");
  check_label(k, y);
  EncodedLabel out{std::vector<double>(static_cast<std::size_t>(k), 0.0), y,
                   EncodingMode::standard};
  out.weights[static_cast<std::size_t>(y)] = 1.0;
  return out;
}

/// Flipped one-hot label for the backdoor branch: weight 1 on every class of
/// S(y), 0 elsewhere (in particular at y).
inline EncodedLabel encode(const TargetSpec &spec, int y) {
  const auto set = target_set(spec, y);
  EncodedLabel out{std::vector<double>(static_cast<std::size_t>(spec.num_classes), 0.0), y,
                   spec.mode == AttackMode::fra ? EncodingMode::flipped_full
                                                : EncodingMode::flipped_narrow};
  for (int t : set) {
    out.weights[static_cast<std::size_t>(t)] = 1.0;
  }
  return out;
}

constexpr std::string_view to_string(AttackMode mode) {
  return mode == AttackMode::fra ? "fra" : "nra";
}

constexpr std::string_view to_string(VicinityPolicy policy) {
  return policy == VicinityPolicy::cyclic ? "cyclic" : "confusion";
}

constexpr std::string_view to_string(EncodingMode mode) {
  switch (mode) {
  case EncodingMode::standard: return "standard";
  case EncodingMode::flipped_full: return "flipped_full";
  case EncodingMode::flipped_narrow: return "flipped_narrow";
  }
  return "standard";
}

inline AttackMode parse_attack_mode(std::string_view text) {
  if (text == "fra") return AttackMode::fra;
  if (text == "nra") return AttackMode::nra;
  fail(ErrorKind::config, "unknown attack mode '" + std::string(text) + "' (expected fra|nra)");
}

inline VicinityPolicy parse_vicinity(std::string_view text) {
  if (text == "cyclic") return VicinityPolicy::cyclic;
  if (text == "confusion") return VicinityPolicy::confusion;
  fail(ErrorKind::config,
       "unknown vicinity policy '" + std::string(text) + "' (expected cyclic|confusion)");
}

} // namespace flipnorm::targets
