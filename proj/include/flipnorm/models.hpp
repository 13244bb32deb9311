// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include <torch/torch.h>

namespace flipnorm::models {

enum class Arch { simple_cnn, resnet18, preact_resnet18 };

std::string_view to_string(Arch a);
Arch parse_arch(std::string_view name);

struct InputSpec {
  int channels = 1;
  int height = 28;
  int width = 28;
  std::vector<double> mean{0.0};
  std::vector<double> std{1.0};
};

/// Classifier base. Inputs are raw [0,1] pixels; per-channel normalization
/// happens inside. The output of the final convolutional stage passes
/// through a channel mask so fine-pruning can zero channels in place.
class ClassifierImpl : public torch::nn::Module {
public:
  ClassifierImpl(Arch arch, int num_classes, InputSpec input);

  torch::Tensor forward(const torch::Tensor &x);
  /// Masked post-activation output of the final convolutional stage.
  torch::Tensor final_features(const torch::Tensor &x);

  Arch arch() const { return arch_; }
  int num_classes() const { return num_classes_; }
  const InputSpec &input() const { return input_; }

  int final_channels() const { return static_cast<int>(prune_mask_.size(0)); }
  torch::Tensor prune_mask() const { return prune_mask_; }
  void set_prune_mask(const torch::Tensor &mask);

protected:
  /// Normalized input -> final conv features (before the mask).
  virtual torch::Tensor features(const torch::Tensor &x) = 0;
  /// Masked features -> logits.
  virtual torch::Tensor head(const torch::Tensor &f) = 0;
  void init_mask(int channels);

private:
  Arch arch_;
  int num_classes_;
  InputSpec input_;
  torch::Tensor mean_;
  torch::Tensor std_;
  torch::Tensor prune_mask_;
};

using Classifier = std::shared_ptr<ClassifierImpl>;

/// Throws invalid_input for unsupported (arch, input) combinations.
Classifier build_classifier(Arch arch, int num_classes, const InputSpec &input);

/// Deep copy with identical parameters, buffers and mode.
Classifier clone(const Classifier &c);

} // namespace flipnorm::models
