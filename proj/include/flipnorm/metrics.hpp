// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "flipnorm/error.hpp"
#include "flipnorm/targets.hpp"

namespace flipnorm::metrics {

struct PredictionRecord {
  int label = 0;
  int predicted = 0;
  bool is_backdoor = false;
};

namespace detail {

inline void check_records(std::span<const PredictionRecord> records, int k, const char *what) {
  require(!records.empty(), ErrorKind::undefined_metric, std::string(what) + " over no records");
  for (const auto &r : records) {
    require(r.label >= 0 && r.label < k && r.predicted >= 0 && r.predicted < k,
            ErrorKind::invalid_label, "prediction record label outside [0, k)");
  }
}

} // namespace detail

/// Fraction of backdoor records whose prediction lands in S(y): any wrong class
/// for the full-range attack, the narrow set for the narrow-range attack.
inline double attack_success_rate(std::span<const PredictionRecord> backdoor,
                                  const targets::TargetSpec &spec) {
  spec.validate();
  detail::check_records(backdoor, spec.num_classes, "attack success rate");
  std::int64_t hits = 0;
  for (const auto &r : backdoor) {
    hits += targets::in_target_set(spec, r.label, r.predicted) ? 1 : 0;
  }
  return static_cast<double>(hits) / static_cast<double>(backdoor.size());
}

inline double clean_accuracy(std::span<const PredictionRecord> clean, int num_classes) {
  detail::check_records(clean, num_classes, "clean accuracy");
  std::int64_t hits = 0;
  for (const auto &r : clean) {
    hits += r.label == r.predicted ? 1 : 0;
  }
  return static_cast<double>(hits) / static_cast<double>(clean.size());
}

/// 1 - sqrt(sum_j (p_j - 1/|H|)^2 / |H|) where p_j = counts[j] / sum(counts)
/// and |H| = counts.size().
inline double dispersibility_score(std::span<const std::int64_t> counts) {
  require(counts.size() >= 2, ErrorKind::undefined_metric, "target set needs |H| >= 2");
  std::int64_t total = 0;
  for (auto c : counts) {
    require(c >= 0, ErrorKind::invalid_input, "negative histogram count");
    total += c;
  }
  require(total > 0, ErrorKind::undefined_metric, "no successful attacks to disperse");
  const double h = static_cast<double>(counts.size());
  const double n = static_cast<double>(total);
  // integer-valued deviations (h * c_j - n) keep the sum exact for realistic counts
  double sum = 0.0;
  for (auto c : counts) {
    const double dev = h * static_cast<double>(c) - n;
    sum += dev * dev;
  }
  return 1.0 - std::sqrt(sum / h) / (n * h);
}

/// Score of a histogram concentrated in a single class: 1 - sqrt(H-1)/H.
inline double ds_floor(int h) {
  require(h >= 2, ErrorKind::undefined_metric, "target set needs |H| >= 2");
  return 1.0 - std::sqrt(static_cast<double>(h - 1)) / static_cast<double>(h);
}

struct EvalReport {
  double asr = 0.0;
  std::optional<double> ds; ///< absent when no attack succeeded
  double ca = 0.0;
  std::string attack;
  std::vector<int> target_classes;     ///< H
  std::vector<std::int64_t> histogram; ///< successes per class of H, pooled over sources
  /// successes by (source label, predicted class); k x k
  std::vector<std::vector<std::int64_t>> source_histograms;
  std::optional<double> ds_per_source; ///< mean over sources of DS restricted to S(y)
  double dominant_share = 0.0;         ///< max over sources of max_j p(j | y)
  int dominant_source = -1;
  int dominant_target = -1;
  std::optional<double> mean_residual_linf;
  std::optional<double> mean_mse;
  std::int64_t n_clean = 0;
  std::int64_t n_backdoor = 0;
  std::int64_t n_success = 0;
  std::string config_hash;
  std::uint64_t seed = 0;

  bool operator==(const EvalReport &) const = default;
};

inline std::string attack_name(const targets::TargetSpec &spec) {
  if (spec.mode == targets::AttackMode::fra) {
    return "fra";
  }
  return "nra-" + std::to_string(spec.m);
}

/// Per-source dominant-class share: the largest fraction of one source class's
/// successes absorbed by a single predicted class.
inline std::vector<double> dominant_shares(const std::vector<std::vector<std::int64_t>> &by_source) {
  std::vector<double> out;
  out.reserve(by_source.size());
  for (const auto &row : by_source) {
    std::int64_t total = 0;
    std::int64_t peak = 0;
    for (auto c : row) {
      total += c;
      peak = std::max(peak, c);
    }
    out.push_back(total > 0 ? static_cast<double>(peak) / static_cast<double>(total) : 0.0);
  }
  return out;
}

inline EvalReport build_report(std::span<const PredictionRecord> clean,
                               std::span<const PredictionRecord> backdoor,
                               const targets::TargetSpec &spec) {
  spec.validate();
  const int k = spec.num_classes;
  EvalReport report;
  report.attack = attack_name(spec);
  report.ca = clean_accuracy(clean, k);
  report.asr = attack_success_rate(backdoor, spec);
  report.n_clean = static_cast<std::int64_t>(clean.size());
  report.n_backdoor = static_cast<std::int64_t>(backdoor.size());

  report.target_classes = targets::target_union(spec);
  std::vector<std::int64_t> pooled(static_cast<std::size_t>(k), 0);
  report.source_histograms.assign(static_cast<std::size_t>(k),
                                  std::vector<std::int64_t>(static_cast<std::size_t>(k), 0));
  for (const auto &r : backdoor) {
    if (!targets::in_target_set(spec, r.label, r.predicted)) {
      continue;
    }
    ++report.n_success;
    ++pooled[static_cast<std::size_t>(r.predicted)];
    ++report.source_histograms[static_cast<std::size_t>(r.label)]
                              [static_cast<std::size_t>(r.predicted)];
  }
  for (int c : report.target_classes) {
    report.histogram.push_back(pooled[static_cast<std::size_t>(c)]);
  }
  if (report.n_success > 0 && report.histogram.size() >= 2) {
    report.ds = dispersibility_score(report.histogram);
  }

  double per_source_sum = 0.0;
  int per_source_n = 0;
  const auto shares = dominant_shares(report.source_histograms);
  for (int y = 0; y < k; ++y) {
    const auto &row = report.source_histograms[static_cast<std::size_t>(y)];
    const auto set = targets::target_set(spec, y);
    std::vector<std::int64_t> restricted;
    std::int64_t total = 0;
    for (int t : set) {
      restricted.push_back(row[static_cast<std::size_t>(t)]);
      total += row[static_cast<std::size_t>(t)];
    }
    if (total > 0 && restricted.size() >= 2) {
      per_source_sum += dispersibility_score(restricted);
      ++per_source_n;
    }
    if (shares[static_cast<std::size_t>(y)] > report.dominant_share) {
      report.dominant_share = shares[static_cast<std::size_t>(y)];
      report.dominant_source = y;
      report.dominant_target = static_cast<int>(
          std::distance(row.begin(), std::max_element(row.begin(), row.end())));
    }
  }
  if (per_source_n > 0) {
    report.ds_per_source = per_source_sum / per_source_n;
  }
  return report;
}

inline nlohmann::json to_json(const EvalReport &r) {
  auto opt = [](const std::optional<double> &v) {
    return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
  };
  return nlohmann::json{{"asr", r.asr},
                        {"ds", opt(r.ds)},
                        {"ca", r.ca},
                        {"attack", r.attack},
                        {"target_classes", r.target_classes},
                        {"histogram", r.histogram},
                        {"source_histograms", r.source_histograms},
                        {"ds_per_source", opt(r.ds_per_source)},
                        {"dominant_share", r.dominant_share},
                        {"dominant_source", r.dominant_source},
                        {"dominant_target", r.dominant_target},
                        {"mean_residual_linf", opt(r.mean_residual_linf)},
                        {"mean_mse", opt(r.mean_mse)},
                        {"n_clean", r.n_clean},
                        {"n_backdoor", r.n_backdoor},
                        {"n_success", r.n_success},
                        {"config_hash", r.config_hash},
                        {"seed", r.seed}};
}

inline EvalReport report_from_json(const nlohmann::json &j) {
  auto opt = [&](const char *key) -> std::optional<double> {
    const auto &v = j.at(key);
    return v.is_null() ? std::nullopt : std::optional<double>(v.get<double>());
  };
  EvalReport r;
  r.asr = j.at("asr").get<double>();
  r.ds = opt("ds");
  r.ca = j.at("ca").get<double>();
  r.attack = j.at("attack").get<std::string>();
  r.target_classes = j.at("target_classes").get<std::vector<int>>();
  r.histogram = j.at("histogram").get<std::vector<std::int64_t>>();
  r.source_histograms = j.at("source_histograms").get<std::vector<std::vector<std::int64_t>>>();
  r.ds_per_source = opt("ds_per_source");
  r.dominant_share = j.at("dominant_share").get<double>();
  r.dominant_source = j.at("dominant_source").get<int>();
  r.dominant_target = j.at("dominant_target").get<int>();
  r.mean_residual_linf = opt("mean_residual_linf");
  r.mean_mse = opt("mean_mse");
  r.n_clean = j.at("n_clean").get<std::int64_t>();
  r.n_backdoor = j.at("n_backdoor").get<std::int64_t>();
  r.n_success = j.at("n_success").get<std::int64_t>();
  r.config_hash = j.at("config_hash").get<std::string>();
  r.seed = j.at("seed").get<std::uint64_t>();
  return r;
}

/// class,count,fraction rows over H for plotting.
inline std::string histogram_csv(const EvalReport &r) {
  std::ostringstream out;
  out << "class,count,fraction\n";
  for (std::size_t i = 0; i < r.target_classes.size(); ++i) {
    const double frac = r.n_success > 0 ? static_cast<double>(r.histogram[i]) /
                                              static_cast<double>(r.n_success)
                                        : 0.0;
    out << r.target_classes[i] << ',' << r.histogram[i] << ',' << frac << '\n';
  }
  return out.str();
}

} // namespace flipnorm::metrics
