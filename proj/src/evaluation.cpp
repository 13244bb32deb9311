// SPDX-License-Identifier: Apache-2.0
#include "flipnorm/evaluation.hpp"

namespace flipnorm::evaluation {

torch::Tensor logits(models::ClassifierImpl &classifier, const torch::Tensor &images, int batch_size) {
  torch::NoGradGuard guard;
  classifier.eval();
  std::vector<torch::Tensor> out;
  for (std::int64_t i = 0; i < images.size(0); i += batch_size) {
    out.push_back(classifier.forward(images.slice(0, i, i + batch_size)));
  }
  return torch::cat(out);
}

torch::Tensor backdoor_images(trigger::GeneratorImpl &generator, const torch::Tensor &images,
                              int batch_size) {
  torch::NoGradGuard guard;
  generator.eval();
  std::vector<torch::Tensor> out;
  for (std::int64_t i = 0; i < images.size(0); i += batch_size) {
    out.push_back(generator.forward(images.slice(0, i, i + batch_size)));
  }
  return torch::cat(out);
}

std::vector<metrics::PredictionRecord> records(const torch::Tensor &labels,
                                               const torch::Tensor &predicted, bool backdoor) {
  const auto y = labels.to(torch::kInt64).contiguous();
  const auto p = predicted.to(torch::kInt64).contiguous();
  std::vector<metrics::PredictionRecord> out(static_cast<std::size_t>(y.size(0)));
  const auto *yp = y.data_ptr<std::int64_t>();
  const auto *pp = p.data_ptr<std::int64_t>();
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = {static_cast<int>(yp[i]), static_cast<int>(pp[i]), backdoor};
  }
  return out;
}

Evaluation evaluate(models::ClassifierImpl &classifier, trigger::GeneratorImpl &generator,
                    const data::Dataset &set, const targets::TargetSpec &spec, int batch_size) {
  const auto x_star = backdoor_images(generator, set.images, batch_size);
  const auto clean_pred = logits(classifier, set.images, batch_size).argmax(1);
  const auto bd_pred = logits(classifier, x_star, batch_size).argmax(1);
  Evaluation ev;
  ev.clean = records(set.labels, clean_pred, false);
  ev.backdoor = records(set.labels, bd_pred, true);
  ev.report = metrics::build_report(ev.clean, ev.backdoor, spec);
  ev.report.mean_residual_linf = trigger::residual_linf(set.images, x_star).mean().item<double>();
  ev.report.mean_mse = trigger::per_image_mse(set.images, x_star).mean().item<double>();
  return ev;
}

Evaluation evaluate(TrainingState &state, const data::Dataset &set) {
  auto ev = evaluate(*state.classifier, *state.generator, set, state.config.target_spec(),
                     state.config.train.eval_batch_size);
  ev.report.config_hash = state.config_hash;
  ev.report.seed = state.config.seed;
  return ev;
}

} // namespace flipnorm::evaluation
