// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>

#include "json.hpp"

#include "flipnorm/checkpoint.hpp"
#include "flipnorm/data.hpp"
#include "flipnorm/defenses.hpp"
#include "flipnorm/metrics.hpp"

/// Glue shared by the command-line tool and the acceptance harness: the
/// experiment-level versions of the defenses and the plot writers.
namespace flipnorm::pipeline {

data::Splits load_data(const config::ExperimentConfig &cfg, const data::FetchOptions &options = {});

/// STRIP on `strip.n_samples` test images and their triggered copies, with
/// overlays drawn from a disjoint slice of the test set.
defenses::StripReport run_strip(TrainingState &state, const data::Dataset &test);

/// Fine-pruning sweep calibrated on the validation split, evaluated on test.
defenses::PruneReport run_prune(TrainingState &state, const data::Splits &splits);

void write_json(const std::filesystem::path &path, const nlohmann::json &j);
nlohmann::json read_json(const std::filesystem::path &path);

/// Prediction histogram over the target classes (bar chart).
void plot_histogram(const std::filesystem::path &path, const metrics::EvalReport &report);

/// Mean softmax of triggered inputs for each source class (small multiples).
void plot_confidence_grid(const std::filesystem::path &path, TrainingState &state,
                          const data::Dataset &set);

/// Clean / triggered / amplified residual rows for the first `n` images.
void plot_triptychs(const std::filesystem::path &path, TrainingState &state, const data::Dataset &set,
                    int n = 8);

void plot_strip(const std::filesystem::path &path, const defenses::StripReport &report, int num_classes);
void plot_prune(const std::filesystem::path &path, const defenses::PruneReport &report);

/// Grouped DS / dominant-share / ASR bars for a compare_reports() summary.
void plot_comparison(const std::filesystem::path &path, const nlohmann::json &comparison);

} // namespace flipnorm::pipeline
