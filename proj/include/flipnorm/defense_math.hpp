// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <vector>

#include "flipnorm/error.hpp"

namespace flipnorm::defense_math {

/// Shannon entropy in nats; zero-probability terms contribute nothing.
inline double entropy(std::span<const double> p) {
  require(!p.empty(), ErrorKind::invalid_input, "entropy of an empty distribution");
  double h = 0.0;
  for (double v : p) {
    require(std::isfinite(v) && v >= 0.0, ErrorKind::invalid_input, "probabilities must be nonnegative");
    if (v > 0.0) {
      h -= v * std::log(v);
    }
  }
  return std::max(0.0, h);
}

/// Linear-interpolation percentile (q in [0, 1]) of an unsorted sample.
inline double percentile(std::vector<double> sample, double q) {
  require(!sample.empty(), ErrorKind::invalid_input, "percentile of an empty sample");
  require(q >= 0.0 && q <= 1.0, ErrorKind::invalid_input, "percentile rank must lie in [0, 1]");
  std::sort(sample.begin(), sample.end());
  const double pos = q * static_cast<double>(sample.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, sample.size() - 1);
  return sample[lo] + (pos - static_cast<double>(lo)) * (sample[hi] - sample[lo]);
}

/// Fraction of `backdoor` values strictly above the q-th percentile of
/// `clean`: how much of the backdoor entropy mass a low-entropy threshold
/// set at that clean false-rejection rate would let through.
inline double overlap_above_percentile(std::span<const double> clean, std::span<const double> backdoor,
                                       double q = 0.01) {
  require(!backdoor.empty(), ErrorKind::invalid_input, "empty backdoor sample");
  const double threshold = percentile(std::vector<double>(clean.begin(), clean.end()), q);
  const auto above = std::count_if(backdoor.begin(), backdoor.end(), [&](double v) { return v > threshold; });
  return static_cast<double>(above) / static_cast<double>(backdoor.size());
}

/// Indices of the floor(rate * n) channels with the smallest mean activation.
/// Ties resolve to the lower index so the result is deterministic.
inline std::vector<std::size_t> lowest_channels(std::span<const double> means, double rate) {
  require(rate >= 0.0 && rate < 1.0, ErrorKind::invalid_input, "prune rate must lie in [0, 1)");
  std::vector<std::size_t> order(means.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return means[a] < means[b]; });
  order.resize(static_cast<std::size_t>(std::floor(rate * static_cast<double>(means.size()) + 1e-9)));
  std::sort(order.begin(), order.end());
  return order;
}

/// Ranks starting at 1; tied values share their average rank.
inline std::vector<double> average_ranks(std::span<const double> v) {
  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> ranks(v.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) {
      ++j;
    }
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t t = i; t <= j; ++t) {
      ranks[order[t]] = r;
    }
    i = j + 1;
  }
  return ranks;
}

/// Spearman rank correlation: Pearson correlation of average ranks.
inline double spearman(std::span<const double> a, std::span<const double> b) {
  require(a.size() == b.size() && a.size() >= 2, ErrorKind::invalid_input,
          "spearman needs two equal-length samples of size >= 2");
  const auto ra = average_ranks(a);
  const auto rb = average_ranks(b);
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(ra.begin(), ra.end(), 0.0) / n;
  const double mb = std::accumulate(rb.begin(), rb.end(), 0.0) / n;
  double cov = 0.0;
  double va = 0.0;
  double vb = 0.0;
  for (std::size_t i = 0; i < ra.size(); ++i) {
    cov += (ra[i] - ma) * (rb[i] - mb);
    va += (ra[i] - ma) * (ra[i] - ma);
    vb += (rb[i] - mb) * (rb[i] - mb);
  }
  require(va > 0.0 && vb > 0.0, ErrorKind::undefined_metric, "spearman of a constant sample");
  return cov / std::sqrt(va * vb);
}

} // namespace flipnorm::defense_math
