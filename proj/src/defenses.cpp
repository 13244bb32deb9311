// SPDX-License-Identifier: Apache-2.0
#include "flipnorm/defenses.hpp"

#include <numeric>
#include <random>

#include "flipnorm/error.hpp"
#include "flipnorm/evaluation.hpp"
#include "flipnorm/torch_losses.hpp"

using nlohmann::json;

namespace flipnorm::defenses {

namespace {

std::vector<double> row_entropies(const torch::Tensor &logits) {
  const auto p = torch::softmax(logits.to(torch::kFloat64), 1).contiguous();
  const auto k = static_cast<std::size_t>(p.size(1));
  const double *pp = p.data_ptr<double>();
  std::vector<double> out(static_cast<std::size_t>(p.size(0)));
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = defense_math::entropy(std::span(pp + i * k, k));
  }
  return out;
}

torch::Tensor blend(const torch::Tensor &x, const torch::Tensor &overlays) {
  return torch::clamp(0.5 * x.unsqueeze(0) + 0.5 * overlays, 0.0, 1.0);
}

} // namespace

double strip_entropy(models::ClassifierImpl &model, const torch::Tensor &x, const torch::Tensor &overlays) {
  require(x.dim() == 3, ErrorKind::invalid_input, "strip_entropy takes a single [C,H,W] image");
  require(overlays.dim() == 4 && overlays.size(0) >= 1, ErrorKind::invalid_input,
          "strip_entropy needs a nonempty overlay set");
  require(overlays.sizes().slice(1) == x.sizes(), ErrorKind::invalid_input,
          "overlays must match the image shape");
  torch::NoGradGuard guard;
  model.eval();
  const auto h = row_entropies(model.forward(blend(x, overlays)));
  return std::accumulate(h.begin(), h.end(), 0.0) / static_cast<double>(h.size());
}

std::vector<double> strip_entropies(models::ClassifierImpl &model, const torch::Tensor &inputs,
                                    const torch::Tensor &pool, int n_overlays, std::uint64_t seed) {
  require(n_overlays >= 1, ErrorKind::config, "n_overlays must be >= 1");
  require(pool.size(0) >= 1, ErrorKind::invalid_input, "empty overlay pool");
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::int64_t> pick(0, pool.size(0) - 1);
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(inputs.size(0)));
  for (std::int64_t i = 0; i < inputs.size(0); ++i) {
    std::vector<std::int64_t> idx(static_cast<std::size_t>(n_overlays));
    for (auto &v : idx) {
      v = pick(rng);
    }
    out.push_back(strip_entropy(model, inputs[i], pool.index_select(0, torch::tensor(idx))));
  }
  return out;
}

StripReport strip_report(models::ClassifierImpl &model, const torch::Tensor &clean,
                         const torch::Tensor &backdoor, const torch::Tensor &pool, int n_overlays,
                         std::uint64_t seed) {
  StripReport r;
  r.undersized = clean.size(0) < 200 || backdoor.size(0) < 200;
  r.clean = strip_entropies(model, clean, pool, n_overlays, seed);
  r.backdoor = strip_entropies(model, backdoor, pool, n_overlays, seed + 1);
  r.clean_p01 = defense_math::percentile(r.clean, 0.01);
  r.overlap = defense_math::overlap_above_percentile(r.clean, r.backdoor, 0.01);
  return r;
}

json to_json(const StripReport &r) {
  auto mean = [](const std::vector<double> &v) {
    return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  };
  return json{{"clean_entropy", r.clean},       {"backdoor_entropy", r.backdoor},
              {"clean_mean", mean(r.clean)},     {"backdoor_mean", mean(r.backdoor)},
              {"clean_p01", r.clean_p01},        {"overlap", r.overlap},
              {"undersized", r.undersized}};
}

std::vector<double> channel_means(models::ClassifierImpl &model, const torch::Tensor &calibration,
                                  int batch_size) {
  torch::NoGradGuard guard;
  model.eval();
  torch::Tensor sum;
  for (std::int64_t i = 0; i < calibration.size(0); i += batch_size) {
    const auto f = model.final_features(calibration.slice(0, i, i + batch_size));
    const auto s = f.abs().to(torch::kFloat64).sum({0, 2, 3});
    sum = sum.defined() ? sum + s : s;
  }
  const auto per = calibration.size(0) * 1.0;
  const auto means = (sum / per).contiguous();
  return {means.data_ptr<double>(), means.data_ptr<double>() + means.size(0)};
}

std::vector<PrunedModel> fine_prune(const models::Classifier &model, const torch::Tensor &calibration,
                                    const std::vector<double> &rates, int batch_size) {
  require(calibration.size(0) >= 1, ErrorKind::invalid_input, "empty calibration set");
  for (double r : rates) {
    require(r >= 0.0 && r < 1.0, ErrorKind::invalid_input, "prune rate must lie in [0, 1)");
  }
  // rank on the unpruned network so every rate prunes a nested set
  auto base = models::clone(model);
  base->set_prune_mask(torch::ones({base->final_channels()}));
  const auto means = channel_means(*base, calibration, batch_size);
  std::vector<PrunedModel> out;
  for (double r : rates) {
    PrunedModel p;
    p.rate = r;
    p.channels = defense_math::lowest_channels(means, r);
    p.model = models::clone(model);
    auto mask = torch::ones({p.model->final_channels()});
    for (auto c : p.channels) {
      mask[static_cast<std::int64_t>(c)] = 0.0;
    }
    p.model->set_prune_mask(mask);
    p.model->eval();
    out.push_back(std::move(p));
  }
  return out;
}

namespace {

void fine_tune(models::Classifier &model, const torch::Tensor &x, const torch::Tensor &y,
               const config::ExperimentConfig &cfg) {
  torch::optim::Adam opt(model->parameters(), torch::optim::AdamOptions(cfg.train.lr * 0.1));
  model->train();
  const auto b = cfg.train.batch_size;
  for (int e = 0; e < cfg.prune.fine_tune_epochs; ++e) {
    for (std::int64_t i = 0; i < x.size(0); i += b) {
      opt.zero_grad();
      losses::cross_entropy(model->forward(x.slice(0, i, i + b)), y.slice(0, i, i + b)).backward();
      opt.step();
    }
  }
  model->eval();
}

} // namespace

PruneReport prune_sweep(TrainingState &state, const data::Dataset &calibration,
                        const data::Dataset &evaluation_set) {
  require(calibration.size() >= 1000, ErrorKind::invalid_input,
          "fine-pruning needs at least 1000 calibration images");
  const auto &cfg = state.config;
  auto pruned = fine_prune(state.classifier, calibration.images, cfg.prune.rates, cfg.train.eval_batch_size);
  const auto spec = cfg.target_spec();
  PruneReport report;
  std::vector<double> asr;
  std::vector<double> ca;
  for (auto &p : pruned) {
    if (cfg.prune.fine_tune_epochs > 0 && p.rate > 0.0) {
      fine_tune(p.model, calibration.images, calibration.labels, cfg);
    }
    const auto ev = evaluation::evaluate(*p.model, *state.generator, evaluation_set, spec,
                                         cfg.train.eval_batch_size);
    report.points.push_back({p.rate, static_cast<int>(p.channels.size()), ev.report.asr, ev.report.ca,
                             ev.report.ds});
    if (p.rate > 0.0) {
      asr.push_back(ev.report.asr);
      ca.push_back(ev.report.ca);
    }
  }
  if (asr.size() >= 2) {
    try {
      report.spearman_asr_ca = defense_math::spearman(asr, ca);
    } catch (const Error &) {
      report.spearman_asr_ca.reset();
    }
  }
  return report;
}

json to_json(const PruneReport &r) {
  json points = json::array();
  for (const auto &p : r.points) {
    points.push_back({{"rate", p.rate},
                      {"pruned_channels", p.pruned},
                      {"asr", p.asr},
                      {"ca", p.ca},
                      {"ds", p.ds ? json(*p.ds) : json(nullptr)}});
  }
  return json{{"points", points},
              {"spearman_asr_ca", r.spearman_asr_ca ? json(*r.spearman_asr_ca) : json(nullptr)}};
}

} // namespace flipnorm::defenses
