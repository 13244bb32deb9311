// SPDX-License-Identifier: Apache-2.0
// Command-line front end: fetch-data, train, eval, strip, prune,
// compare-baseline, plot.
#include <cstdio>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"

#include "flipnorm/baseline.hpp"
#include "flipnorm/checkpoint.hpp"
#include "flipnorm/config.hpp"
#include "flipnorm/error.hpp"
#include "flipnorm/evaluation.hpp"
#include "flipnorm/pipeline.hpp"
#include "flipnorm/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace flipnorm;

namespace {

enum Exit : int {
  ok = 0,
  other = 1,
  config_error = 2,
  data_error = 3,
  divergence_error = 4,
  io_error = 5,
  mismatch_error = 6,
};

int exit_code(ErrorKind kind) {
  switch (kind) {
  case ErrorKind::config:
  case ErrorKind::invalid_spec: return config_error;
  case ErrorKind::data: return data_error;
  case ErrorKind::divergence: return divergence_error;
  case ErrorKind::io: return io_error;
  case ErrorKind::checkpoint_mismatch: return mismatch_error;
  default: return other;
  }
}

std::string pct(const json &v) {
  if (v.is_null()) {
    return "   n/a";
  }
  char buf[16];
  std::snprintf(buf, sizeof buf, "%6.2f", 100.0 * v.get<double>());
  return buf;
}

void print_epoch(const json &r) {
  std::printf("%5d %8lld %9.2e %8.4f %8.4f %8.4f %9.4f  %s %s %s %6.1fs\n", r.at("epoch").get<int>(),
              static_cast<long long>(r.at("step").get<std::int64_t>()), r.at("lr").get<double>(),
              r.at("mse").get<double>(), r.at("ce").get<double>(), r.at("lnf").get<double>(),
              r.at("total").get<double>(), pct(r.value("val_ca", json())).c_str(),
              pct(r.value("val_asr", json())).c_str(), pct(r.value("val_ds", json())).c_str(),
              r.at("seconds").get<double>());
  std::fflush(stdout);
}

void print_report(const metrics::EvalReport &r) {
  const auto j = metrics::to_json(r);
  std::printf("CA %s%%  ASR %s%%  DS %s%%  DS/source %s%%  dominant %s%%  MSE %.5f\n", pct(j["ca"]).c_str(),
              pct(j["asr"]).c_str(), pct(j["ds"]).c_str(), pct(j["ds_per_source"]).c_str(),
              pct(j["dominant_share"]).c_str(), r.mean_mse.value_or(0.0));
}

data::FetchOptions fetch_options(const std::string &cache, bool offline) {
  data::FetchOptions o;
  if (!cache.empty()) {
    o.cache = cache;
  }
  o.allow_download = !offline;
  return o;
}

TrainingState load_run(const fs::path &run, bool force) {
  checkpoint::LoadOptions lo;
  lo.with_optimizer = false;
  if (fs::exists(run / "config.json")) {
    lo.expected_hash = config::hash(config::load(run / "config.json"));
    lo.force = force;
  }
  return checkpoint::load(run, lo);
}

data::Dataset pick_split(const data::Splits &s, const std::string &split) {
  if (split == "test") return s.test;
  if (split == "val") return s.val;
  if (split == "train") return s.train;
  fail(ErrorKind::config, "unknown split '" + split + "' (expected test|val|train)");
}

} // namespace

int main(int argc, char **argv) {
  CLI::App app{"flipnorm: untargeted backdoor training with normalized flipped labels"};
  app.require_subcommand(1);
  std::string cache;
  bool offline = false;
  app.add_option("--cache", cache, "Dataset cache root (default $FLIPNORM_CACHE or ~/.cache/flipnorm)");
  app.add_flag("--offline", offline, "Never download; use the cache only");

  auto *fetch = app.add_subcommand("fetch-data", "Download and verify a dataset");
  std::string dataset = "mnist";
  fetch->add_option("dataset", dataset, "mnist | cifar10 | cifar100 | gtsrb")->required();

  auto *train = app.add_subcommand("train", "Train a classifier and trigger generator");
  std::string config_path;
  std::string out_dir;
  std::string resume_dir;
  bool dry_run = false;
  bool force = false;
  train->add_option("--config", config_path, "Experiment config (JSON)");
  train->add_option("--out", out_dir, "Run directory to create");
  train->add_option("--resume", resume_dir, "Continue the run in this directory");
  train->add_flag("--dry-run", dry_run, "Validate, build models, run 2 steps, exit");
  train->add_flag("--force", force, "Resume even if the config hash changed");

  std::string run_dir;
  std::string split = "test";
  auto *eval = app.add_subcommand("eval", "Evaluate a run's checkpoint");
  eval->add_option("--run", run_dir, "Run directory")->required();
  eval->add_option("--split", split, "test | val | train");
  eval->add_flag("--force", force, "Ignore a config-hash mismatch");

  auto *strip = app.add_subcommand("strip", "STRIP entropy analysis of a run");
  strip->add_option("--run", run_dir, "Run directory")->required();
  strip->add_flag("--force", force, "Ignore a config-hash mismatch");

  auto *prune = app.add_subcommand("prune", "Fine-pruning sweep of a run");
  prune->add_option("--run", run_dir, "Run directory")->required();
  prune->add_flag("--force", force, "Ignore a config-hash mismatch");

  auto *compare = app.add_subcommand("compare-baseline", "Compare an attack run with a naive-flip run");
  std::string attack_dir;
  std::string baseline_dir;
  compare->add_option("--attack", attack_dir, "Run trained with the normalized loss")->required();
  compare->add_option("--baseline", baseline_dir, "Run trained with the naive flip loss")->required();
  compare->add_option("--out", out_dir, "Output directory (default: <attack>/reports)");

  auto *plot = app.add_subcommand("plot", "Render plots from a run or a report");
  std::string report_path;
  plot->add_option("--run", run_dir, "Run directory: render every plot");
  plot->add_option("--report", report_path, "EvalReport JSON: render its histogram");
  plot->add_option("--out", out_dir, "Output file or directory");

  CLI11_PARSE(app, argc, argv);

  try {
    const auto fo = fetch_options(cache, offline);

    if (*fetch) {
      const auto id = data::parse_dataset(dataset);
      const auto r = data::fetch(id, fo);
      std::cout << (r.downloaded ? "downloaded " : "cached ") << dataset << " -> " << r.directory.string()
                << "\n";
      if (id == data::DatasetId::mnist) {
        const auto s = data::load_splits(id, 0, 0, fo);
        std::cout << s.train.size() << " train / " << s.test.size() << " test images\n";
      }
      return ok;
    }

    if (*train) {
      config::ExperimentConfig cfg;
      training::TrainOptions opts;
      if (!resume_dir.empty()) {
        opts.run_dir = resume_dir;
        opts.resume = true;
        opts.force = force;
        cfg = config_path.empty() ? config::load(opts.run_dir / "config.json") : config::load(config_path);
      } else {
        require(!config_path.empty(), ErrorKind::config, "train needs --config (or --resume)");
        cfg = config::load(config_path);
        if (dry_run) {
          opts.max_steps = 2;
        } else {
          require(!out_dir.empty(), ErrorKind::config, "train needs --out for a new run");
          opts.run_dir = out_dir;
        }
      }
      const auto splits = pipeline::load_data(cfg, fo);
      std::cout << "config " << cfg.name << " hash " << config::hash(cfg) << ", " << splits.train.size()
                << " train / " << splits.val.size() << " val / " << splits.test.size() << " test\n";
      if (dry_run) {
        auto r = training::train(cfg, splits, opts);
        std::cout << "dry run ok: " << r.state.step << " steps\n";
        return ok;
      }
      std::printf("%5s %8s %9s %8s %8s %8s %9s  %6s %6s %6s\n", "epoch", "step", "lr", "mse", "ce", "flip",
                  "total", "CA%", "ASR%", "DS%");
      opts.on_epoch = print_epoch;
      auto r = training::train(cfg, splits, opts);
      if (r.test_report) {
        std::cout << "test: ";
        print_report(*r.test_report);
      }
      return ok;
    }

    if (*eval) {
      auto state = load_run(run_dir, force);
      const auto splits = pipeline::load_data(state.config, fo);
      const auto ev = evaluation::evaluate(state, pick_split(splits, split));
      const auto dir = fs::path(run_dir) / "reports";
      pipeline::write_json(dir / (split + "_report.json"), metrics::to_json(ev.report));
      std::ofstream(dir / (split + "_histogram.csv")) << metrics::histogram_csv(ev.report);
      print_report(ev.report);
      return ok;
    }

    if (*strip) {
      auto state = load_run(run_dir, force);
      const auto splits = pipeline::load_data(state.config, fo);
      const auto r = pipeline::run_strip(state, splits.test);
      if (r.undersized) {
        std::cerr << "warning: fewer than 200 samples per side; proceeding\n";
      }
      auto j = defenses::to_json(r);
      j["config_hash"] = state.config_hash;
      j["seed"] = state.config.seed;
      pipeline::write_json(fs::path(run_dir) / "reports" / "strip_report.json", j);
      pipeline::plot_strip(fs::path(run_dir) / "plots" / "strip_entropy.svg", r,
                           state.classifier->num_classes());
      std::printf("STRIP mean entropy clean %.4f, triggered %.4f; overlap above clean p1: %.4f\n",
                  j["clean_mean"].get<double>(), j["backdoor_mean"].get<double>(), r.overlap);
      return ok;
    }

    if (*prune) {
      auto state = load_run(run_dir, force);
      const auto splits = pipeline::load_data(state.config, fo);
      const auto r = pipeline::run_prune(state, splits);
      auto j = defenses::to_json(r);
      j["config_hash"] = state.config_hash;
      j["seed"] = state.config.seed;
      pipeline::write_json(fs::path(run_dir) / "reports" / "prune_report.json", j);
      pipeline::plot_prune(fs::path(run_dir) / "plots" / "prune_sweep.svg", r);
      std::printf("%6s %7s %8s %8s\n", "rate", "pruned", "ASR%", "CA%");
      for (const auto &p : r.points) {
        std::printf("%6.2f %7d %8.2f %8.2f\n", p.rate, p.pruned, 100 * p.asr, 100 * p.ca);
      }
      if (r.spearman_asr_ca) {
        std::printf("spearman(ASR, CA) over rates > 0: %.4f\n", *r.spearman_asr_ca);
      }
      return ok;
    }

    if (*compare) {
      auto attack = load_run(attack_dir, false);
      auto base = load_run(baseline_dir, false);
      require(attack.config.dataset == base.config.dataset, ErrorKind::checkpoint_mismatch,
              "runs use different datasets");
      const auto splits = pipeline::load_data(attack.config, fo);
      // both runs are scored under the attack's target spec
      auto a = evaluation::evaluate(attack, splits.test).report;
      auto b = evaluation::evaluate(*base.classifier, *base.generator, splits.test, attack.config.target_spec(),
                                    attack.config.train.eval_batch_size)
                   .report;
      b.config_hash = base.config_hash;
      b.seed = base.config.seed;
      const auto cmp = baseline::compare_reports(a, b);
      const fs::path dir = out_dir.empty() ? fs::path(attack_dir) / "reports" : fs::path(out_dir);
      pipeline::write_json(dir / "compare_baseline.json", cmp);
      pipeline::plot_comparison(dir / "compare_baseline.svg", cmp);
      std::cout << "attack:   ";
      print_report(a);
      std::cout << "baseline: ";
      print_report(b);
      if (!cmp["ds_gap"].is_null()) {
        std::printf("DS gap %.4f\n", cmp["ds_gap"].get<double>());
      }
      return ok;
    }

    if (*plot) {
      if (!report_path.empty()) {
        const auto r = metrics::report_from_json(pipeline::read_json(report_path));
        const fs::path out = out_dir.empty() ? fs::path(report_path).replace_extension(".svg") : fs::path(out_dir);
        pipeline::plot_histogram(out, r);
        std::cout << "wrote " << out.string() << "\n";
        return ok;
      }
      require(!run_dir.empty(), ErrorKind::config, "plot needs --run or --report");
      auto state = load_run(run_dir, false);
      const auto splits = pipeline::load_data(state.config, fo);
      const fs::path dir = out_dir.empty() ? fs::path(run_dir) / "plots" : fs::path(out_dir);
      const auto report_file = fs::path(run_dir) / "reports" / "test_report.json";
      const auto report = fs::exists(report_file) ? metrics::report_from_json(pipeline::read_json(report_file))
                                                  : evaluation::evaluate(state, splits.test).report;
      pipeline::plot_histogram(dir / "prediction_histogram.svg", report);
      pipeline::plot_confidence_grid(dir / "confidence_grid.svg", state, splits.test);
      pipeline::plot_triptychs(dir / "residuals.png", state, splits.test);
      const auto strip_file = fs::path(run_dir) / "reports" / "strip_report.json";
      if (fs::exists(strip_file)) {
        const auto j = pipeline::read_json(strip_file);
        defenses::StripReport r;
        r.clean = j.at("clean_entropy").get<std::vector<double>>();
        r.backdoor = j.at("backdoor_entropy").get<std::vector<double>>();
        r.overlap = j.at("overlap").get<double>();
        pipeline::plot_strip(dir / "strip_entropy.svg", r, state.classifier->num_classes());
      }
      std::cout << "wrote plots to " << dir.string() << "\n";
      return ok;
    }
  } catch (const Error &e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code(e.kind());
  } catch (const std::exception &e) {
    std::cerr << "error: " << e.what() << "\n";
    return other;
  }
  return ok;
}
