// SPDX-License-Identifier: Apache-2.0
#include "flipnorm/training.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <random>
#include <sstream>

#include "flipnorm/error.hpp"
#include "flipnorm/evaluation.hpp"
#include "flipnorm/torch_losses.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace flipnorm::training {

losses::LossWeights weights_at(const config::ExperimentConfig &cfg, std::int64_t step) {
  const auto &t = cfg.train;
  if (cfg.loss == config::LossMode::clean || step < t.warmup_steps) {
    return {0.0, cfg.weights.beta > 0.0 ? cfg.weights.beta : 1.0, 0.0};
  }
  auto w = cfg.weights;
  if (t.gamma_ramp_steps > 0) {
    const double progress = static_cast<double>(step - t.warmup_steps + 1) / t.gamma_ramp_steps;
    w.gamma *= std::min(1.0, progress);
  }
  return w;
}

double lr_at(const config::ExperimentConfig &cfg, std::int64_t step, std::int64_t total_steps) {
  const double lr = cfg.train.lr;
  if (cfg.train.schedule == config::Schedule::constant || total_steps <= 0) {
    return lr;
  }
  const double progress = std::min(1.0, static_cast<double>(step) / static_cast<double>(total_steps));
  return 0.5 * lr * (1.0 + std::cos(std::numbers::pi * progress));
}

namespace {

void require_finite_logits(const TrainingState &state, const torch::Tensor &z) {
  if (!torch::isfinite(z.detach()).all().item<bool>()) {
    std::ostringstream msg;
    msg << "non-finite logits at step " << state.step << " (epoch " << state.epoch << ", lr "
        << state.lr() << ")";
    fail(ErrorKind::divergence, msg.str());
  }
}

struct LossTensors {
  torch::Tensor total;
  StepLosses scalars;
};

LossTensors forward_losses(TrainingState &state, const torch::Tensor &x, const torch::Tensor &y) {
  const auto &cfg = state.config;
  const auto w = weights_at(cfg, state.step);
  StepLosses out;
  out.alpha = w.alpha;
  out.beta = w.beta;
  out.gamma = w.gamma;

  const bool attack = cfg.loss != config::LossMode::clean && state.step >= cfg.train.warmup_steps;
  if (!attack) {
    const auto z = state.classifier->forward(x);
    require_finite_logits(state, z);
    const auto ce = losses::cross_entropy(z, y);
    out.ce = ce.item<double>();
    out.total = losses::total_loss(0.0, out.ce, 0.0, w);
    return {w.beta * ce, out};
  }

  const auto b = x.size(0);
  const auto nb = std::clamp<std::int64_t>(
      static_cast<std::int64_t>(std::llround(cfg.train.backdoor_fraction * static_cast<double>(b))), 1, b);
  const auto xb = x.slice(0, 0, nb);
  const auto yb = y.slice(0, 0, nb);
  const auto x_star = trigger::apply_trigger(state.generator, xb);
  // one forward over the concatenated batch so BN sees both halves together
  const auto z = state.classifier->forward(torch::cat({x, x_star}));
  require_finite_logits(state, z);
  const auto zc = z.slice(0, 0, b);
  const auto zb = z.slice(0, b, b + nb);
  const auto spec = cfg.target_spec();

  const auto mse = trigger::mse_loss(xb, x_star);
  const auto ce = losses::cross_entropy(zc, y);
  const auto flip = cfg.loss == config::LossMode::lnf
                        ? losses::lnf_loss(zb, yb, spec, cfg.normalization)
                        : losses::naive_flip_loss(zb, yb, spec);
  out.mse = mse.item<double>();
  out.ce = ce.item<double>();
  out.lnf = flip.item<double>();
  out.backdoor = true;
  for (double v : {out.mse, out.ce, out.lnf}) {
    if (!std::isfinite(v)) {
      out.total = v;
      return {w.alpha * mse + w.beta * ce + w.gamma * flip, out};
    }
  }
  out.total = losses::total_loss(out.mse, out.ce, out.lnf, w);
  return {w.alpha * mse + w.beta * ce + w.gamma * flip, out};
}

[[noreturn]] void diverged(const TrainingState &state, const torch::Tensor &x, const StepLosses &l) {
  std::ostringstream msg;
  msg << "non-finite loss at step " << state.step << " (epoch " << state.epoch << ", lr " << state.lr()
      << "): mse=" << l.mse << " ce=" << l.ce << " flip=" << l.lnf << " total=" << l.total
      << "; batch mean=" << x.mean().item<double>() << " std=" << x.std().item<double>()
      << " min=" << x.min().item<double>() << " max=" << x.max().item<double>();
  fail(ErrorKind::divergence, msg.str());
}

json epoch_record(const TrainingState &s, const StepLosses &mean, double seconds,
                  const std::optional<metrics::EvalReport> &val) {
  json r{{"epoch", s.epoch},
         {"step", s.step},
         {"lr", s.lr()},
         {"mse", mean.mse},
         {"ce", mean.ce},
         {"lnf", mean.lnf},
         {"total", mean.total},
         {"gamma", mean.gamma},
         {"seconds", seconds}};
  if (val) {
    r["val_ca"] = val->ca;
    r["val_asr"] = val->asr;
    r["val_ds"] = val->ds ? json(*val->ds) : json(nullptr);
    r["val_ds_per_source"] = val->ds_per_source ? json(*val->ds_per_source) : json(nullptr);
    r["val_dominant_share"] = val->dominant_share;
    r["val_mse"] = val->mean_mse ? json(*val->mean_mse) : json(nullptr);
  }
  return r;
}

void write_json(const fs::path &path, const json &j) {
  std::ofstream out(path);
  out << j.dump(2) << "\n";
  require(static_cast<bool>(out), ErrorKind::io, "cannot write " + path.string());
}

/// Writes the config snapshot or checks an existing one; returns the state
/// to continue from.
TrainingState open_run(const config::ExperimentConfig &cfg, const TrainOptions &options) {
  const auto hash = config::hash(cfg);
  if (options.run_dir.empty()) {
    return TrainingState::create(cfg);
  }
  const auto snapshot = options.run_dir / "config.json";
  const bool has_checkpoint = fs::exists(options.run_dir / "checkpoint.pt");
  if (options.resume) {
    require(has_checkpoint, ErrorKind::io, "nothing to resume in " + options.run_dir.string());
    checkpoint::LoadOptions lo;
    lo.expected_hash = hash;
    lo.force = options.force;
    return checkpoint::load(options.run_dir, lo);
  }
  require(!has_checkpoint, ErrorKind::config,
          options.run_dir.string() + " already holds a run; resume it or pick a new directory");
  fs::create_directories(options.run_dir);
  if (fs::exists(snapshot)) {
    const auto existing = config::load(snapshot);
    require(config::hash(existing) == hash || options.force, ErrorKind::checkpoint_mismatch,
            "config snapshot in " + options.run_dir.string() + " differs from the requested config");
  }
  write_json(snapshot, config::to_json(cfg));
  fs::remove(options.run_dir / "log.jsonl");
  return TrainingState::create(cfg);
}

} // namespace

StepLosses compute_losses(TrainingState &state, const torch::Tensor &x, const torch::Tensor &y,
                          bool with_grad) {
  if (with_grad) {
    return forward_losses(state, x, y).scalars;
  }
  torch::NoGradGuard guard;
  return forward_losses(state, x, y).scalars;
}

StepLosses train_step(TrainingState &state, const torch::Tensor &x, const torch::Tensor &y) {
  state.classifier->train();
  state.generator->train();
  state.optimizer->zero_grad();
  auto [total, scalars] = forward_losses(state, x, y);
  if (!std::isfinite(scalars.total)) {
    diverged(state, x, scalars);
  }
  total.backward();
  state.optimizer->step();
  ++state.step;
  return scalars;
}

TrainResult train(const config::ExperimentConfig &cfg, const data::Splits &splits,
                  const TrainOptions &options) {
  auto state = open_run(cfg, options);
  const auto &t = state.config.train;
  const auto n = splits.train.size();
  require(n >= t.batch_size, ErrorKind::data, "training set smaller than one batch");
  const std::int64_t steps_per_epoch = (n + t.batch_size - 1) / t.batch_size;
  const std::int64_t total_steps = steps_per_epoch * t.epochs;
  const bool logging = !options.run_dir.empty();
  std::int64_t taken = 0;

  while (state.epoch < t.epochs) {
    const auto started = std::chrono::steady_clock::now();
    // the order of each epoch depends only on (seed, epoch), so a resumed run
    // replays exactly the batches an uninterrupted one would see
    std::vector<std::int64_t> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), std::int64_t{0});
    std::mt19937_64 rng(state.config.seed * 0x9e3779b97f4a7c15ULL + static_cast<std::uint64_t>(state.epoch));
    std::shuffle(order.begin(), order.end(), rng);
    const auto perm = torch::tensor(order, torch::kInt64);

    StepLosses sum;
    std::int64_t count = 0;
    for (std::int64_t i = 0; i < n; i += t.batch_size) {
      if (options.max_steps >= 0 && taken >= options.max_steps) {
        return {std::move(state), std::nullopt};
      }
      const auto idx = perm.slice(0, i, std::min(i + t.batch_size, n));
      const auto x = splits.train.images.index_select(0, idx);
      const auto y = splits.train.labels.index_select(0, idx);
      state.set_lr(lr_at(state.config, state.step, total_steps));
      const auto l = train_step(state, x, y);
      sum.mse += l.mse;
      sum.ce += l.ce;
      sum.lnf += l.lnf;
      sum.total += l.total;
      sum.gamma = l.gamma;
      ++count;
      ++taken;
    }
    ++state.epoch;
    const double c = static_cast<double>(std::max<std::int64_t>(count, 1));
    sum.mse /= c;
    sum.ce /= c;
    sum.lnf /= c;
    sum.total /= c;

    std::optional<metrics::EvalReport> val;
    if (splits.val.size() > 0) {
      try {
        val = evaluation::evaluate(state, splits.val).report;
      } catch (const Error &e) {
        if (e.kind() != ErrorKind::undefined_metric) {
          throw;
        }
      }
    }
    const double seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    const auto record = epoch_record(state, sum, seconds, val);
    if (logging) {
      std::ofstream log(options.run_dir / "log.jsonl", std::ios::app);
      log << record.dump() << "\n";
      require(static_cast<bool>(log), ErrorKind::io, "cannot append to training log");
      checkpoint::save(state, options.run_dir);
    }
    if (options.on_epoch) {
      options.on_epoch(record);
    }
    if (options.stop_after_epoch && state.epoch >= *options.stop_after_epoch && state.epoch < t.epochs) {
      return {std::move(state), std::nullopt};
    }
  }

  auto report = evaluation::evaluate(state, splits.test).report;
  if (logging) {
    fs::create_directories(options.run_dir / "reports");
    write_json(options.run_dir / "reports" / "test_report.json", metrics::to_json(report));
    std::ofstream csv(options.run_dir / "reports" / "test_histogram.csv");
    csv << metrics::histogram_csv(report);
  }
  return {std::move(state), report};
}

} // namespace flipnorm::training
