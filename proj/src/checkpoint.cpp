// SPDX-License-Identifier: Apache-2.0
#include "flipnorm/checkpoint.hpp"

#include <fstream>

#include "flipnorm/error.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace flipnorm {

TrainingState TrainingState::create(const config::ExperimentConfig &cfg) {
  cfg.validate();
  if (cfg.train.threads > 0) {
    torch::set_num_threads(cfg.train.threads);
  }
  torch::manual_seed(cfg.seed);
  TrainingState s;
  s.config = cfg;
  s.config_hash = config::hash(cfg);
  s.classifier = models::build_classifier(cfg.arch, data::info(cfg.dataset).num_classes, cfg.input_spec());
  s.generator = trigger::Generator(cfg.generator_config());

  std::vector<torch::Tensor> params = s.classifier->parameters();
  for (auto &p : s.generator->parameters()) {
    params.push_back(p);
  }
  const auto &t = cfg.train;
  if (t.optimizer == config::Optimizer::adam) {
    s.optimizer = std::make_unique<torch::optim::Adam>(
        params, torch::optim::AdamOptions(t.lr).weight_decay(t.weight_decay));
  } else {
    s.optimizer = std::make_unique<torch::optim::SGD>(
        params, torch::optim::SGDOptions(t.lr).momentum(t.momentum).weight_decay(t.weight_decay));
  }
  return s;
}

void TrainingState::set_lr(double lr) {
  for (auto &group : optimizer->param_groups()) {
    group.options().set_lr(lr);
  }
}

double TrainingState::lr() const { return optimizer->param_groups().front().options().get_lr(); }

namespace checkpoint {

namespace {

json sidecar(const TrainingState &s) {
  const auto spec = s.config.target_spec();
  return json{
      {"format_version", 1},
      {"config", config::to_json(s.config)},
      {"config_hash", s.config_hash},
      {"seed", s.config.seed},
      {"epoch", s.epoch},
      {"step", s.step},
      {"arch", models::to_string(s.config.arch)},
      {"num_classes", spec.num_classes},
      {"target_spec",
       {{"mode", targets::to_string(spec.mode)},
        {"m", spec.m},
        {"vicinity", targets::to_string(spec.vicinity)}}},
      {"loss_weights",
       {{"alpha", s.config.weights.alpha},
        {"beta", s.config.weights.beta},
        {"gamma", s.config.weights.gamma}}},
      {"normalization", {{"tau", s.config.normalization.tau}, {"epsilon", s.config.normalization.epsilon}}},
  };
}

} // namespace

void save(const TrainingState &state, const fs::path &dir, const std::string &stem) {
  try {
    fs::create_directories(dir);
    torch::serialize::OutputArchive archive;
    torch::serialize::OutputArchive classifier;
    torch::serialize::OutputArchive generator;
    torch::serialize::OutputArchive optimizer;
    state.classifier->save(classifier);
    state.generator->save(generator);
    state.optimizer->save(optimizer);
    archive.write("classifier", classifier);
    archive.write("generator", generator);
    archive.write("optimizer", optimizer);
    archive.write("step", torch::tensor(state.step, torch::kInt64));
    archive.write("epoch", torch::tensor(static_cast<std::int64_t>(state.epoch), torch::kInt64));

    const auto weights_tmp = dir / (stem + ".pt.tmp");
    const auto meta_tmp = dir / (stem + ".json.tmp");
    archive.save_to(weights_tmp.string());
    {
      std::ofstream out(meta_tmp);
      out << sidecar(state).dump(2) << "\n";
      require(static_cast<bool>(out), ErrorKind::io, "cannot write " + meta_tmp.string());
    }
    fs::rename(weights_tmp, dir / (stem + ".pt"));
    fs::rename(meta_tmp, dir / (stem + ".json"));
  } catch (const c10::Error &e) {
    fail(ErrorKind::io, "saving checkpoint to " + dir.string() + ": " + e.what_without_backtrace());
  } catch (const fs::filesystem_error &e) {
    fail(ErrorKind::io, e.what());
  }
}

json read_sidecar(const fs::path &dir, const std::string &stem) {
  const auto path = dir / (stem + ".json");
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorKind::io, "no checkpoint sidecar at " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception &e) {
    fail(ErrorKind::io, path.string() + ": " + e.what());
  }
}

TrainingState load(const fs::path &dir, const LoadOptions &options, const std::string &stem) {
  const auto meta = read_sidecar(dir, stem);
  const auto cfg = config::from_json(meta.at("config"));
  const auto stored_hash = meta.at("config_hash").get<std::string>();
  require(stored_hash == config::hash(cfg), ErrorKind::checkpoint_mismatch,
          "sidecar config does not match its recorded hash");
  const int k = meta.at("num_classes").get<int>();
  if (options.expected_classes) {
    require(*options.expected_classes == k, ErrorKind::checkpoint_mismatch,
            "checkpoint has " + std::to_string(k) + " classes, expected " +
                std::to_string(*options.expected_classes));
  }
  if (options.expected_hash && !options.force) {
    require(*options.expected_hash == stored_hash, ErrorKind::checkpoint_mismatch,
            "checkpoint config hash " + stored_hash + " differs from " + *options.expected_hash +
                " (pass --force to override)");
  }

  auto state = TrainingState::create(cfg);
  try {
    torch::serialize::InputArchive archive;
    archive.load_from((dir / (stem + ".pt")).string());
    torch::serialize::InputArchive classifier;
    torch::serialize::InputArchive generator;
    archive.read("classifier", classifier);
    archive.read("generator", generator);
    state.classifier->load(classifier);
    state.generator->load(generator);
    if (options.with_optimizer) {
      torch::serialize::InputArchive optimizer;
      archive.read("optimizer", optimizer);
      state.optimizer->load(optimizer);
    }
    torch::Tensor step;
    torch::Tensor epoch;
    archive.read("step", step);
    archive.read("epoch", epoch);
    state.step = step.item<std::int64_t>();
    state.epoch = static_cast<int>(epoch.item<std::int64_t>());
  } catch (const c10::Error &e) {
    fail(ErrorKind::checkpoint_mismatch,
         "cannot load checkpoint from " + dir.string() + ": " + e.what_without_backtrace());
  }
  return state;
}

} // namespace checkpoint
} // namespace flipnorm
