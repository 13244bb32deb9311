// SPDX-License-Identifier: Apache-2.0
#include "flipnorm/trigger.hpp"

#include <cmath>

#include "flipnorm/error.hpp"

namespace F = torch::nn::functional;

namespace flipnorm::trigger {

void GeneratorConfig::validate() const {
  require(channels >= 1, ErrorKind::config, "generator channels must be >= 1");
  require(depth >= 1 && depth <= 5, ErrorKind::config, "generator depth must lie in [1, 5]");
  require(base_channels >= 1, ErrorKind::config, "generator base_channels must be >= 1");
  require(std::isfinite(scale) && scale > 0.0 && scale <= 1.0, ErrorKind::config,
          "trigger scale must lie in (0, 1]");
  require(std::isfinite(head_gain) && head_gain > 0.0, ErrorKind::config,
          "generator head_gain must be positive");
}

ConvBlockImpl::ConvBlockImpl(int in, int out) {
  auto conv = [](int i, int o) { return torch::nn::Conv2d(torch::nn::Conv2dOptions(i, o, 3).padding(1)); };
  body_ = register_module("body", torch::nn::Sequential(conv(in, out), torch::nn::BatchNorm2d(out),
                                                        torch::nn::ReLU(), conv(out, out),
                                                        torch::nn::BatchNorm2d(out), torch::nn::ReLU()));
}

torch::Tensor ConvBlockImpl::forward(const torch::Tensor &x) { return body_->forward(x); }

GeneratorImpl::GeneratorImpl(GeneratorConfig cfg) : cfg_(cfg) {
  cfg_.validate();
  const int b = cfg_.base_channels;
  int in = cfg_.channels;
  std::vector<int> widths;
  for (int level = 0; level < cfg_.depth; ++level) {
    const int out = b << level;
    down_->push_back(ConvBlock(in, out));
    widths.push_back(out);
    in = out;
  }
  bottleneck_ = register_module("bottleneck", ConvBlock(in, in * 2));
  in *= 2;
  for (int level = cfg_.depth - 1; level >= 0; --level) {
    const int skip = widths[static_cast<std::size_t>(level)];
    up_->push_back(ConvBlock(in + skip, skip));
    in = skip;
  }
  register_module("down", down_);
  register_module("up", up_);
  head_ = register_module("head", torch::nn::Conv2d(torch::nn::Conv2dOptions(b, cfg_.channels, 1)));
  torch::NoGradGuard guard;
  head_->weight.mul_(cfg_.head_gain);
  head_->bias.mul_(cfg_.head_gain);
}

torch::Tensor GeneratorImpl::forward(const torch::Tensor &x) {
  const std::int64_t h = x.size(2);
  const std::int64_t w = x.size(3);
  const std::int64_t m = std::int64_t{1} << cfg_.depth;
  const std::int64_t ph = (m - h % m) % m;
  const std::int64_t pw = (m - w % m) % m;
  // symmetric padding where possible: 28 -> 32 gets 2 pixels per side
  const std::vector<std::int64_t> pad{pw / 2, pw - pw / 2, ph / 2, ph - ph / 2};
  const auto xp = (ph || pw) ? F::pad(x, F::PadFuncOptions(pad)) : x;

  std::vector<torch::Tensor> skips;
  auto feat = xp;
  for (const auto &block : *down_) {
    feat = block->as<ConvBlock>()->forward(feat);
    skips.push_back(feat);
    feat = F::max_pool2d(feat, F::MaxPool2dFuncOptions(2));
  }
  feat = bottleneck_->forward(feat);
  for (const auto &block : *up_) {
    feat = F::interpolate(feat, F::InterpolateFuncOptions()
                                    .scale_factor(std::vector<double>{2.0, 2.0})
                                    .mode(torch::kNearest));
    feat = block->as<ConvBlock>()->forward(torch::cat({feat, skips.back()}, 1));
    skips.pop_back();
  }
  const auto out = torch::clamp(xp + cfg_.scale * torch::tanh(head_->forward(feat)), 0.0, 1.0);
  return out.slice(2, pad[2], pad[2] + h).slice(3, pad[0], pad[0] + w);
}

torch::Tensor apply_trigger(Generator &g, const torch::Tensor &x) {
  require(x.dim() == 4, ErrorKind::invalid_input, "image batch must be [N, C, H, W]");
  require(x.size(1) == g->config().channels, ErrorKind::invalid_input,
          "image batch has " + std::to_string(x.size(1)) + " channels, generator expects " +
              std::to_string(g->config().channels));
  return g->forward(x);
}

namespace {
void check_pair(const torch::Tensor &a, const torch::Tensor &b) {
  require(a.sizes() == b.sizes(), ErrorKind::invalid_input, "image batches differ in shape");
}
} // namespace

torch::Tensor mse_loss(const torch::Tensor &x, const torch::Tensor &x_star) {
  check_pair(x, x_star);
  return (x_star - x).square().mean();
}

torch::Tensor per_image_mse(const torch::Tensor &x, const torch::Tensor &x_star) {
  check_pair(x, x_star);
  return (x_star - x).square().flatten(1).mean(1);
}

torch::Tensor residual(const torch::Tensor &x, const torch::Tensor &x_star) {
  check_pair(x, x_star);
  return x_star - x;
}

torch::Tensor residual_linf(const torch::Tensor &x, const torch::Tensor &x_star) {
  check_pair(x, x_star);
  return (x_star - x).abs().flatten(1).amax(1);
}

} // namespace flipnorm::trigger
