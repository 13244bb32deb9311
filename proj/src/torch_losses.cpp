// SPDX-License-Identifier: Apache-2.0
#include "flipnorm/torch_losses.hpp"

#include <span>

#include <torch/autograd.h>

namespace flipnorm::losses {

namespace {

using torch::autograd::AutogradContext;
using torch::autograd::variable_list;

class WeightedLogLossFn : public torch::autograd::Function<WeightedLogLossFn> {
public:
  static torch::Tensor forward(AutogradContext *ctx, const torch::Tensor &logits,
                               const torch::Tensor &weights, bool normalize, double tau,
                               double epsilon) {
    const auto z = logits.detach().to(torch::kFloat64).contiguous();
    const auto w = weights.detach().to(torch::kFloat64).contiguous();
    const LogitTransform tr{normalize, tau, epsilon};
    const auto n = z.size(0);
    const auto k = static_cast<std::size_t>(z.size(1));
    const double *zp = z.data_ptr<double>();
    const double *wp = w.data_ptr<double>();
    double total = 0.0;
    for (std::int64_t i = 0; i < n; ++i) {
      total += losses::weighted_log_loss<double, double>(std::span(zp + i * k, k),
                                                         std::span(wp + i * k, k), tr);
    }
    ctx->save_for_backward({z, w});
    ctx->saved_data["normalize"] = normalize;
    ctx->saved_data["tau"] = tau;
    ctx->saved_data["epsilon"] = epsilon;
    ctx->saved_data["dtype"] = static_cast<std::int64_t>(logits.scalar_type());
    return torch::tensor(total / static_cast<double>(n), logits.options());
  }

  static variable_list backward(AutogradContext *ctx, variable_list grad_out) {
    const auto saved = ctx->get_saved_variables();
    const auto &z = saved[0];
    const auto &w = saved[1];
    const LogitTransform tr{ctx->saved_data["normalize"].toBool(), ctx->saved_data["tau"].toDouble(),
                            ctx->saved_data["epsilon"].toDouble()};
    const auto n = z.size(0);
    const auto k = static_cast<std::size_t>(z.size(1));
    auto grad = torch::empty_like(z);
    const double *zp = z.data_ptr<double>();
    const double *wp = w.data_ptr<double>();
    double *gp = grad.data_ptr<double>();
    for (std::int64_t i = 0; i < n; ++i) {
      const auto g = losses::weighted_log_loss_grad<double, double>(std::span(zp + i * k, k),
                                                                    std::span(wp + i * k, k), tr);
      std::copy(g.begin(), g.end(), gp + i * k);
    }
    const auto dtype = static_cast<c10::ScalarType>(ctx->saved_data["dtype"].toInt());
    const auto scale = grad_out[0].to(torch::kFloat64) / static_cast<double>(n);
    return {(grad * scale).to(dtype), torch::Tensor(), torch::Tensor(), torch::Tensor(),
            torch::Tensor()};
  }
};

void check_batch(const torch::Tensor &logits, const torch::Tensor &labels) {
  require(logits.dim() == 2 && logits.size(1) >= 2, ErrorKind::invalid_input,
          "logits must be [N, k] with k >= 2");
  require(labels.dim() == 1 && labels.size(0) == logits.size(0), ErrorKind::invalid_input,
          "labels must be [N] matching the logit batch");
  require(logits.size(0) > 0, ErrorKind::invalid_input, "empty batch");
  require(torch::isfinite(logits.detach()).all().item<bool>(), ErrorKind::invalid_input,
          "logits contain non-finite values");
}

} // namespace

torch::Tensor weighted_log_loss(const torch::Tensor &logits, const torch::Tensor &weights,
                                const LogitTransform &transform) {
  require(weights.sizes() == logits.sizes(), ErrorKind::invalid_encoding,
          "weight rows must match the logit batch");
  return WeightedLogLossFn::apply(logits, weights, transform.normalize, transform.tau,
                                  transform.epsilon);
}

torch::Tensor encode_batch(const targets::TargetSpec &spec, const torch::Tensor &labels) {
  spec.validate();
  const auto y = labels.to(torch::kInt64).contiguous();
  const auto n = y.size(0);
  auto out = torch::zeros({n, spec.num_classes}, torch::kFloat64);
  auto acc = out.accessor<double, 2>();
  const auto *yp = y.data_ptr<std::int64_t>();
  for (std::int64_t i = 0; i < n; ++i) {
    const auto enc = targets::encode(spec, static_cast<int>(yp[i]));
    for (int t = 0; t < spec.num_classes; ++t) {
      acc[i][t] = enc.weights[static_cast<std::size_t>(t)];
    }
  }
  return out;
}

torch::Tensor one_hot_batch(int num_classes, const torch::Tensor &labels) {
  const auto y = labels.to(torch::kInt64).contiguous();
  const auto *yp = y.data_ptr<std::int64_t>();
  for (std::int64_t i = 0; i < y.size(0); ++i) {
    targets::check_label(num_classes, static_cast<int>(yp[i]));
  }
  return torch::one_hot(y, num_classes).to(torch::kFloat64);
}

torch::Tensor cross_entropy(const torch::Tensor &logits, const torch::Tensor &labels) {
  check_batch(logits, labels);
  return weighted_log_loss(logits, one_hot_batch(static_cast<int>(logits.size(1)), labels),
                           LogitTransform::identity());
}

torch::Tensor lnf_loss(const torch::Tensor &logits, const torch::Tensor &labels,
                       const targets::TargetSpec &spec, const NormalizationConfig &cfg) {
  cfg.validate();
  check_batch(logits, labels);
  require(logits.size(1) == spec.num_classes, ErrorKind::invalid_encoding,
          "logit width differs from the spec's class count");
  return weighted_log_loss(logits, encode_batch(spec, labels), LogitTransform::normalized(cfg));
}

torch::Tensor naive_flip_loss(const torch::Tensor &logits, const torch::Tensor &labels,
                              const targets::TargetSpec &spec) {
  check_batch(logits, labels);
  require(logits.size(1) == spec.num_classes, ErrorKind::invalid_encoding,
          "logit width differs from the spec's class count");
  return weighted_log_loss(logits, encode_batch(spec, labels), LogitTransform::identity());
}

} // namespace flipnorm::losses
