// SPDX-License-Identifier: Apache-2.0
#include "flipnorm/config.hpp"

#include <cmath>
#include <fstream>
#include <functional>
#include <set>

#include <openssl/evp.h>

#include "flipnorm/error.hpp"

using nlohmann::json;

namespace flipnorm::config {

std::string_view to_string(LossMode m) {
  switch (m) {
  case LossMode::lnf: return "lnf";
  case LossMode::naive_flip: return "naive_flip";
  case LossMode::clean: return "clean";
  }
  return "unknown";
}

LossMode parse_loss_mode(std::string_view name) {
  if (name == "lnf") return LossMode::lnf;
  if (name == "naive_flip") return LossMode::naive_flip;
  if (name == "clean") return LossMode::clean;
  fail(ErrorKind::config, "unknown loss mode '" + std::string(name) + "' (expected lnf|naive_flip|clean)");
}

namespace {

std::string_view optimizer_name(Optimizer o) { return o == Optimizer::adam ? "adam" : "sgd"; }
std::string_view schedule_name(Schedule s) { return s == Schedule::cosine ? "cosine" : "constant"; }

/// Walks a JSON object, reading known keys and collecting every problem
/// instead of stopping at the first.
class Reader {
public:
  Reader(const json &obj, std::string path, std::vector<std::string> &errors)
      : obj_(obj), path_(std::move(path)), errors_(errors) {
    if (!obj_.is_object()) {
      errors_.push_back(where("") + "must be an object");
    }
  }

  ~Reader() {
    if (!obj_.is_object()) {
      return;
    }
    for (const auto &[key, _] : obj_.items()) {
      if (!seen_.contains(key)) {
        errors_.push_back(where(key) + "unknown key");
      }
    }
  }

  template <class T> void get(const std::string &key, T &out) {
    seen_.insert(key);
    if (!obj_.is_object() || !obj_.contains(key)) {
      return;
    }
    try {
      out = obj_.at(key).get<T>();
    } catch (const json::exception &) {
      errors_.push_back(where(key) + "has the wrong type (" + std::string(obj_.at(key).type_name()) + ")");
    }
  }

  /// Enum-like string fields parsed with the library's own parsers.
  template <class T, class Parse> void get_enum(const std::string &key, T &out, Parse parse) {
    std::optional<std::string> text;
    seen_.insert(key);
    if (!obj_.is_object() || !obj_.contains(key)) {
      return;
    }
    if (!obj_.at(key).is_string()) {
      errors_.push_back(where(key) + "must be a string");
      return;
    }
    try {
      out = parse(obj_.at(key).get<std::string>());
    } catch (const Error &e) {
      errors_.push_back(where(key) + e.what());
    }
  }

  const json *child(const std::string &key) {
    seen_.insert(key);
    if (!obj_.is_object() || !obj_.contains(key)) {
      return nullptr;
    }
    return &obj_.at(key);
  }

  std::string sub(const std::string &key) const { return path_.empty() ? key : path_ + "." + key; }

private:
  std::string where(const std::string &key) const {
    const auto p = key.empty() ? path_ : sub(key);
    return "'" + (p.empty() ? std::string("<root>") : p) + "' ";
  }

  const json &obj_;
  std::string path_;
  std::vector<std::string> &errors_;
  std::set<std::string> seen_;
};

void check(std::vector<std::string> &errors, bool ok, const std::string &msg) {
  if (!ok) {
    errors.push_back(msg);
  }
}

std::vector<std::string> violations(const ExperimentConfig &c) {
  std::vector<std::string> e;
  check(e, c.schema_version == 1, "'schema_version' must be 1");
  check(e, !c.name.empty(), "'name' must be nonempty");
  const int k = data::info(c.dataset).num_classes;
  if (c.attack == targets::AttackMode::nra) {
    check(e, c.m >= 1 && c.m <= k - 1, "'attack.m' must lie in [1, " + std::to_string(k - 1) + "]");
  }
  if (c.vicinity == targets::VicinityPolicy::confusion) {
    check(e, c.similarity.size() == static_cast<std::size_t>(k * k),
          "'attack.similarity' must be a " + std::to_string(k) + "x" + std::to_string(k) +
              " row-major matrix for the confusion policy");
  }
  auto capture = [&](auto &&fn) {
    try {
      fn();
    } catch (const Error &err) {
      e.push_back(err.what());
    }
  };
  capture([&] { c.weights.validate(); });
  capture([&] { c.normalization.validate(); });
  capture([&] { c.generator_config().validate(); });
  const auto &t = c.train;
  check(e, t.epochs >= 1, "'train.epochs' must be >= 1");
  check(e, t.batch_size >= 2, "'train.batch_size' must be >= 2");
  check(e, std::isfinite(t.lr) && t.lr > 0.0, "'train.lr' must be positive");
  check(e, t.momentum >= 0.0 && t.momentum < 1.0, "'train.momentum' must lie in [0, 1)");
  check(e, t.weight_decay >= 0.0, "'train.weight_decay' must be nonnegative");
  check(e, t.backdoor_fraction > 0.0 && t.backdoor_fraction <= 1.0,
        "'train.backdoor_fraction' must lie in (0, 1]");
  check(e, t.warmup_steps >= 0, "'train.warmup_steps' must be >= 0");
  check(e, t.gamma_ramp_steps >= 0, "'train.gamma_ramp_steps' must be >= 0");
  check(e, t.val_size >= 0, "'train.val_size' must be >= 0");
  check(e, t.eval_batch_size >= 1, "'train.eval_batch_size' must be >= 1");
  check(e, t.threads >= 0, "'train.threads' must be >= 0");
  check(e, c.strip.n_overlays >= 1, "'strip.n_overlays' must be >= 1");
  check(e, c.strip.n_samples >= 1, "'strip.n_samples' must be >= 1");
  check(e, !c.prune.rates.empty(), "'prune.rates' must be nonempty");
  for (double r : c.prune.rates) {
    check(e, r >= 0.0 && r < 1.0, "'prune.rates' entries must lie in [0, 1)");
  }
  check(e, std::is_sorted(c.prune.rates.begin(), c.prune.rates.end()),
        "'prune.rates' must be sorted ascending");
  check(e, c.prune.calibration_size >= 1, "'prune.calibration_size' must be >= 1");
  check(e, c.prune.fine_tune_epochs >= 0, "'prune.fine_tune_epochs' must be >= 0");
  return e;
}

[[noreturn]] void report(const std::vector<std::string> &errors) {
  std::string msg = std::to_string(errors.size()) + " problem(s) in experiment config:";
  for (const auto &e : errors) {
    msg += "\n  - " + e;
  }
  fail(ErrorKind::config, msg);
}

} // namespace

targets::TargetSpec ExperimentConfig::target_spec() const {
  return {attack, attack == targets::AttackMode::nra ? m : 1, vicinity, data::info(dataset).num_classes,
          similarity};
}

trigger::GeneratorConfig ExperimentConfig::generator_config() const {
  return {data::info(dataset).channels, generator_depth, generator_base_channels, trigger_scale,
          generator_head_gain};
}

models::InputSpec ExperimentConfig::input_spec() const {
  const auto i = data::info(dataset);
  return {i.channels, i.height, i.width, i.mean, i.std};
}

void ExperimentConfig::validate() const {
  const auto errors = violations(*this);
  if (!errors.empty()) {
    report(errors);
  }
}

json to_json(const ExperimentConfig &c) {
  const auto &t = c.train;
  return json{
      {"schema_version", c.schema_version},
      {"name", c.name},
      {"seed", c.seed},
      {"dataset", data::info(c.dataset).name},
      {"arch", models::to_string(c.arch)},
      {"attack",
       {{"mode", targets::to_string(c.attack)},
        {"m", c.m},
        {"vicinity", targets::to_string(c.vicinity)},
        {"similarity", c.similarity}}},
      {"loss",
       {{"mode", to_string(c.loss)},
        {"alpha", c.weights.alpha},
        {"beta", c.weights.beta},
        {"gamma", c.weights.gamma},
        {"tau", c.normalization.tau},
        {"epsilon", c.normalization.epsilon}}},
      {"trigger",
       {{"depth", c.generator_depth},
        {"base_channels", c.generator_base_channels},
        {"scale", c.trigger_scale},
        {"head_gain", c.generator_head_gain}}},
      {"train",
       {{"epochs", t.epochs},
        {"batch_size", t.batch_size},
        {"lr", t.lr},
        {"optimizer", optimizer_name(t.optimizer)},
        {"momentum", t.momentum},
        {"weight_decay", t.weight_decay},
        {"schedule", schedule_name(t.schedule)},
        {"backdoor_fraction", t.backdoor_fraction},
        {"warmup_steps", t.warmup_steps},
        {"gamma_ramp_steps", t.gamma_ramp_steps},
        {"val_size", t.val_size},
        {"eval_batch_size", t.eval_batch_size},
        {"threads", t.threads}}},
      {"strip", {{"n_overlays", c.strip.n_overlays}, {"n_samples", c.strip.n_samples}}},
      {"prune",
       {{"rates", c.prune.rates},
        {"calibration_size", c.prune.calibration_size},
        {"fine_tune_epochs", c.prune.fine_tune_epochs}}},
  };
}

ExperimentConfig from_json(const json &j) {
  ExperimentConfig c;
  std::vector<std::string> errors;
  {
    Reader root(j, "", errors);
    root.get("schema_version", c.schema_version);
    root.get("name", c.name);
    root.get("seed", c.seed);
    root.get_enum("dataset", c.dataset, data::parse_dataset);
    root.get_enum("arch", c.arch, models::parse_arch);
    if (const auto *a = root.child("attack")) {
      Reader r(*a, "attack", errors);
      r.get_enum("mode", c.attack, targets::parse_attack_mode);
      r.get("m", c.m);
      r.get_enum("vicinity", c.vicinity, targets::parse_vicinity);
      r.get("similarity", c.similarity);
    }
    if (const auto *l = root.child("loss")) {
      Reader r(*l, "loss", errors);
      r.get_enum("mode", c.loss, parse_loss_mode);
      r.get("alpha", c.weights.alpha);
      r.get("beta", c.weights.beta);
      r.get("gamma", c.weights.gamma);
      r.get("tau", c.normalization.tau);
      r.get("epsilon", c.normalization.epsilon);
    }
    if (const auto *g = root.child("trigger")) {
      Reader r(*g, "trigger", errors);
      r.get("depth", c.generator_depth);
      r.get("base_channels", c.generator_base_channels);
      r.get("scale", c.trigger_scale);
      r.get("head_gain", c.generator_head_gain);
    }
    if (const auto *t = root.child("train")) {
      Reader r(*t, "train", errors);
      auto &s = c.train;
      r.get("epochs", s.epochs);
      r.get("batch_size", s.batch_size);
      r.get("lr", s.lr);
      r.get_enum("optimizer", s.optimizer, [](const std::string &v) {
        if (v == "adam") return Optimizer::adam;
        if (v == "sgd") return Optimizer::sgd;
        fail(ErrorKind::config, "unknown optimizer '" + v + "' (expected adam|sgd)");
      });
      r.get("momentum", s.momentum);
      r.get("weight_decay", s.weight_decay);
      r.get_enum("schedule", s.schedule, [](const std::string &v) {
        if (v == "constant") return Schedule::constant;
        if (v == "cosine") return Schedule::cosine;
        fail(ErrorKind::config, "unknown schedule '" + v + "' (expected constant|cosine)");
      });
      r.get("backdoor_fraction", s.backdoor_fraction);
      r.get("warmup_steps", s.warmup_steps);
      r.get("gamma_ramp_steps", s.gamma_ramp_steps);
      r.get("val_size", s.val_size);
      r.get("eval_batch_size", s.eval_batch_size);
      r.get("threads", s.threads);
    }
    if (const auto *s = root.child("strip")) {
      Reader r(*s, "strip", errors);
      r.get("n_overlays", c.strip.n_overlays);
      r.get("n_samples", c.strip.n_samples);
    }
    if (const auto *p = root.child("prune")) {
      Reader r(*p, "prune", errors);
      r.get("rates", c.prune.rates);
      r.get("calibration_size", c.prune.calibration_size);
      r.get("fine_tune_epochs", c.prune.fine_tune_epochs);
    }
  }
  if (errors.empty()) {
    errors = violations(c);
  }
  if (!errors.empty()) {
    report(errors);
  }
  return c;
}

ExperimentConfig load(const std::filesystem::path &path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorKind::config, "cannot read config " + path.string());
  json j;
  try {
    j = json::parse(in, nullptr, true, true);
  } catch (const json::parse_error &e) {
    fail(ErrorKind::config, path.string() + ": " + e.what());
  }
  return from_json(j);
}

std::string hash(const ExperimentConfig &c) {
  // nlohmann::json objects keep keys sorted, so dump() is canonical
  const auto text = to_json(c).dump();
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_Digest(text.data(), text.size(), md, &len, EVP_sha256(), nullptr);
  static const char *digits = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < 8; ++i) {
    out += digits[md[i] >> 4];
    out += digits[md[i] & 0xf];
  }
  return out;
}

} // namespace flipnorm::config
