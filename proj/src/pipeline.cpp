// SPDX-License-Identifier: Apache-2.0
#include "flipnorm/pipeline.hpp"

#include <cmath>
#include <fstream>
#include <numeric>
#include <random>

#include "flipnorm/error.hpp"
#include "flipnorm/evaluation.hpp"
#include "flipnorm/images.hpp"
#include "flipnorm/svg.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace flipnorm::pipeline {

namespace {

void write_text(const fs::path &path, const std::string &text) {
  if (path.has_parent_path()) {
    fs::create_directories(path.parent_path());
  }
  std::ofstream out(path);
  out << text;
  require(static_cast<bool>(out), ErrorKind::io, "cannot write " + path.string());
}

std::vector<std::string> class_labels(const std::vector<int> &classes) {
  std::vector<std::string> out;
  for (int c : classes) {
    out.push_back(std::to_string(c));
  }
  return out;
}

/// Seeded permutation of the test set, split into an input slice and a
/// disjoint overlay slice.
std::pair<torch::Tensor, torch::Tensor> strip_slices(const data::Dataset &test, int n, std::uint64_t seed) {
  std::vector<std::int64_t> order(static_cast<std::size_t>(test.size()));
  std::iota(order.begin(), order.end(), std::int64_t{0});
  std::mt19937_64 rng(seed ^ 0x57519ULL);
  std::shuffle(order.begin(), order.end(), rng);
  const auto idx = torch::tensor(order, torch::kInt64);
  const auto take = std::min<std::int64_t>(n, test.size() / 2);
  return {idx.slice(0, 0, take), idx.slice(0, take, test.size())};
}

} // namespace

data::Splits load_data(const config::ExperimentConfig &cfg, const data::FetchOptions &options) {
  return data::load_splits(cfg.dataset, cfg.seed, cfg.train.val_size, options);
}

defenses::StripReport run_strip(TrainingState &state, const data::Dataset &test) {
  const auto &cfg = state.config;
  const auto [inputs, pool] = strip_slices(test, cfg.strip.n_samples, cfg.seed);
  const auto clean = test.images.index_select(0, inputs);
  const auto triggered = evaluation::backdoor_images(*state.generator, clean, cfg.train.eval_batch_size);
  const auto overlays = test.images.index_select(0, pool);
  return defenses::strip_report(*state.classifier, clean, triggered, overlays, cfg.strip.n_overlays,
                                cfg.seed);
}

defenses::PruneReport run_prune(TrainingState &state, const data::Splits &splits) {
  const auto n = std::min<std::int64_t>(state.config.prune.calibration_size, splits.val.size());
  return defenses::prune_sweep(state, splits.val.slice(0, n), splits.test);
}

void write_json(const fs::path &path, const json &j) { write_text(path, j.dump(2) + "\n"); }

json read_json(const fs::path &path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorKind::io, "cannot read " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception &e) {
    fail(ErrorKind::io, path.string() + ": " + e.what());
  }
}

void plot_histogram(const fs::path &path, const metrics::EvalReport &report) {
  std::vector<double> fractions;
  const double total = report.n_success > 0 ? static_cast<double>(report.n_success) : 1.0;
  for (auto c : report.histogram) {
    fractions.push_back(static_cast<double>(c) / total);
  }
  std::string title = "Predictions of successful attacks (" + report.attack + ")";
  if (report.ds) {
    title += ", DS " + svg::fmt(*report.ds, 4);
  }
  write_text(path, svg::bars(title, class_labels(report.target_classes), fractions, "fraction"));
}

void plot_confidence_grid(const fs::path &path, TrainingState &state, const data::Dataset &set) {
  const int k = state.classifier->num_classes();
  const auto bs = state.config.train.eval_batch_size;
  const auto x_star = evaluation::backdoor_images(*state.generator, set.images, bs);
  const auto probs = torch::softmax(evaluation::logits(*state.classifier, x_star, bs), 1);
  std::vector<std::vector<double>> rows;
  std::vector<std::string> titles;
  std::vector<int> truth;
  for (int y = 0; y < k; ++y) {
    const auto mask = set.labels == y;
    if (mask.sum().item<std::int64_t>() == 0) {
      continue;
    }
    const auto mean = probs.index({mask}).mean(0).to(torch::kFloat64).contiguous();
    rows.emplace_back(mean.data_ptr<double>(), mean.data_ptr<double>() + k);
    titles.push_back("source " + std::to_string(y));
    truth.push_back(y);
  }
  write_text(path, svg::bar_grid("Mean softmax on triggered inputs (red: true class)", titles, rows,
                                 std::min(5, static_cast<int>(rows.size())), 1.0, truth));
}

void plot_triptychs(const fs::path &path, TrainingState &state, const data::Dataset &set, int n) {
  const auto clean = set.images.slice(0, 0, n);
  const auto triggered = evaluation::backdoor_images(*state.generator, clean, n);
  if (path.has_parent_path()) {
    fs::create_directories(path.parent_path());
  }
  images::write_png(path, images::triptych_grid(clean, triggered, clean.size(2) < 64 ? 4 : 2));
}

void plot_strip(const fs::path &path, const defenses::StripReport &report, int num_classes) {
  write_text(path, svg::histograms("STRIP entropy (overlap " + svg::fmt(report.overlap, 3) + ")",
                                   {"clean", "triggered"}, {report.clean, report.backdoor}, 30, 0.0,
                                   std::log(static_cast<double>(num_classes)), "entropy (nats)"));
}

void plot_prune(const fs::path &path, const defenses::PruneReport &report) {
  std::vector<double> rates;
  std::vector<double> asr;
  std::vector<double> ca;
  for (const auto &p : report.points) {
    rates.push_back(p.rate);
    asr.push_back(p.asr);
    ca.push_back(p.ca);
  }
  if (rates.size() < 2) {
    return;
  }
  write_text(path, svg::lines("Fine-pruning sweep", rates, {"ASR", "CA"}, {asr, ca}, "prune rate"));
}

void plot_comparison(const fs::path &path, const json &comparison) {
  auto fractions = [](const json &side) {
    const auto h = side.at("histogram").get<std::vector<std::int64_t>>();
    double total = 0;
    for (auto c : h) {
      total += static_cast<double>(c);
    }
    std::vector<double> out;
    for (auto c : h) {
      out.push_back(total > 0 ? static_cast<double>(c) / total : 0.0);
    }
    return out;
  };
  const auto a = fractions(comparison.at("attack"));
  const auto b = fractions(comparison.at("baseline"));
  std::vector<int> classes(a.size());
  std::iota(classes.begin(), classes.end(), 0);
  write_text(path, svg::grouped_bars("Prediction share of successful attacks", class_labels(classes),
                                     {"normalized flip", "naive flip"}, {a, b}, "fraction"));

  auto metric = [](const json &side, const char *key) {
    return side.at(key).is_null() ? 0.0 : side.at(key).get<double>();
  };
  const auto &at = comparison.at("attack");
  const auto &bl = comparison.at("baseline");
  auto metrics_path = path;
  metrics_path.replace_filename(path.stem().string() + "_metrics.svg");
  write_text(metrics_path,
             svg::grouped_bars("Attack vs baseline", {"DS", "DS per source", "dominant share", "ASR"},
                               {"normalized flip", "naive flip"},
                               {{metric(at, "ds"), metric(at, "ds_per_source"), metric(at, "dominant_share"),
                                 metric(at, "asr")},
                                {metric(bl, "ds"), metric(bl, "ds_per_source"), metric(bl, "dominant_share"),
                                 metric(bl, "asr")}},
                               "", 1.0));
}

} // namespace flipnorm::pipeline
