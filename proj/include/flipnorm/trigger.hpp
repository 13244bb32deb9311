// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <vector>

#include <torch/torch.h>

namespace flipnorm::trigger {

struct GeneratorConfig {
  int channels = 1;
  int depth = 3;
  int base_channels = 32;
  double scale = 0.3;      ///< residual cap: ||x* - x||_inf <= scale
  double head_gain = 0.1;  ///< shrinks the output head at init so x* starts near x

  void validate() const;
};

/// Two 3x3 conv + BN + ReLU layers.
class ConvBlockImpl : public torch::nn::Module {
public:
  ConvBlockImpl(int in, int out);
  torch::Tensor forward(const torch::Tensor &x);

private:
  torch::nn::Sequential body_{nullptr};
};
TORCH_MODULE(ConvBlock);

/// Encoder-decoder with skip connections emitting a bounded residual:
/// x* = clamp(x + scale * tanh(head(features)), 0, 1). Inputs are padded to a
/// multiple of 2^depth internally and cropped back.
class GeneratorImpl : public torch::nn::Module {
public:
  explicit GeneratorImpl(GeneratorConfig cfg);
  torch::Tensor forward(const torch::Tensor &x);
  const GeneratorConfig &config() const { return cfg_; }

private:
  GeneratorConfig cfg_;
  torch::nn::ModuleList down_;
  ConvBlock bottleneck_{nullptr};
  torch::nn::ModuleList up_;
  torch::nn::Conv2d head_{nullptr};
};
TORCH_MODULE(Generator);

/// Checks pixel range and channel count, then runs the generator.
torch::Tensor apply_trigger(Generator &g, const torch::Tensor &x);

/// Mean of squared per-pixel differences.
torch::Tensor mse_loss(const torch::Tensor &x, const torch::Tensor &x_star);

/// Per-image mean squared difference, shape [N].
torch::Tensor per_image_mse(const torch::Tensor &x, const torch::Tensor &x_star);

/// Signed difference x* - x.
torch::Tensor residual(const torch::Tensor &x, const torch::Tensor &x_star);

/// Per-image max |x* - x|, shape [N].
torch::Tensor residual_linf(const torch::Tensor &x, const torch::Tensor &x_star);

} // namespace flipnorm::trigger
