// SPDX-License-Identifier: Apache-2.0
#include "flipnorm/models.hpp"

#include "flipnorm/error.hpp"

namespace F = torch::nn::functional;
namespace nn = torch::nn;

namespace flipnorm::models {

std::string_view to_string(Arch a) {
  switch (a) {
  case Arch::simple_cnn: return "simple_cnn";
  case Arch::resnet18: return "resnet18";
  case Arch::preact_resnet18: return "preact_resnet18";
  }
  return "unknown";
}

Arch parse_arch(std::string_view name) {
  if (name == "simple_cnn") return Arch::simple_cnn;
  if (name == "resnet18") return Arch::resnet18;
  if (name == "preact_resnet18") return Arch::preact_resnet18;
  fail(ErrorKind::config,
       "unknown arch '" + std::string(name) + "' (expected simple_cnn|resnet18|preact_resnet18)");
}

ClassifierImpl::ClassifierImpl(Arch arch, int num_classes, InputSpec input)
    : arch_(arch), num_classes_(num_classes), input_(std::move(input)) {
  require(num_classes >= 2, ErrorKind::invalid_input, "classifier needs at least 2 classes");
  require(input_.channels >= 1 && input_.height >= 8 && input_.width >= 8, ErrorKind::invalid_input,
          "input must have >= 1 channel and be at least 8x8");
  require(input_.mean.size() == static_cast<std::size_t>(input_.channels) &&
              input_.std.size() == input_.mean.size(),
          ErrorKind::invalid_input, "normalization statistics must have one entry per channel");
  mean_ = register_buffer("input_mean",
                          torch::tensor(input_.mean, torch::kFloat32).view({1, input_.channels, 1, 1}));
  std_ = register_buffer("input_std",
                         torch::tensor(input_.std, torch::kFloat32).view({1, input_.channels, 1, 1}));
}

void ClassifierImpl::init_mask(int channels) {
  prune_mask_ = register_buffer("prune_mask", torch::ones({channels}, torch::kFloat32));
}

void ClassifierImpl::set_prune_mask(const torch::Tensor &mask) {
  require(mask.dim() == 1 && mask.size(0) == prune_mask_.size(0), ErrorKind::invalid_input,
          "prune mask must have one entry per final-layer channel");
  torch::NoGradGuard guard;
  prune_mask_.copy_(mask.to(torch::kFloat32));
}

torch::Tensor ClassifierImpl::final_features(const torch::Tensor &x) {
  require(x.dim() == 4 && x.size(1) == input_.channels && x.size(2) == input_.height &&
              x.size(3) == input_.width,
          ErrorKind::invalid_input,
          "classifier expects [N, " + std::to_string(input_.channels) + ", " +
              std::to_string(input_.height) + ", " + std::to_string(input_.width) + "] input");
  const auto f = features((x - mean_) / std_);
  return f * prune_mask_.view({1, -1, 1, 1});
}

torch::Tensor ClassifierImpl::forward(const torch::Tensor &x) { return head(final_features(x)); }

namespace {

/// conv(c->32, 3x3) + ReLU + maxpool, conv(32->64, 3x3) + ReLU + maxpool,
/// FC -> 256 -> 128 -> k.
class SimpleCnn : public ClassifierImpl {
public:
  SimpleCnn(int k, const InputSpec &in) : ClassifierImpl(Arch::simple_cnn, k, in) {
    const auto after = [](int s) { return ((s - 2) / 2 - 2) / 2; };
    const int h = after(in.height);
    const int w = after(in.width);
    require(h >= 1 && w >= 1, ErrorKind::invalid_input, "input too small for simple_cnn");
    conv1_ = register_module("conv1", nn::Conv2d(nn::Conv2dOptions(in.channels, 32, 3)));
    conv2_ = register_module("conv2", nn::Conv2d(nn::Conv2dOptions(32, 64, 3)));
    fc1_ = register_module("fc1", nn::Linear(64 * h * w, 256));
    fc2_ = register_module("fc2", nn::Linear(256, 128));
    fc3_ = register_module("fc3", nn::Linear(128, k));
    init_mask(64);
  }

protected:
  torch::Tensor features(const torch::Tensor &x) override {
    auto h = F::max_pool2d(torch::relu(conv1_->forward(x)), F::MaxPool2dFuncOptions(2));
    return torch::relu(conv2_->forward(h));
  }
  torch::Tensor head(const torch::Tensor &f) override {
    auto h = F::max_pool2d(f, F::MaxPool2dFuncOptions(2)).flatten(1);
    h = torch::relu(fc1_->forward(h));
    h = torch::relu(fc2_->forward(h));
    return fc3_->forward(h);
  }

private:
  nn::Conv2d conv1_{nullptr}, conv2_{nullptr};
  nn::Linear fc1_{nullptr}, fc2_{nullptr}, fc3_{nullptr};
};

nn::Conv2d conv3x3(int in, int out, int stride) {
  return nn::Conv2d(nn::Conv2dOptions(in, out, 3).stride(stride).padding(1).bias(false));
}

class BasicBlockImpl : public nn::Module {
public:
  BasicBlockImpl(int in, int out, int stride, bool preact) : preact_(preact) {
    conv1_ = register_module("conv1", conv3x3(in, out, stride));
    conv2_ = register_module("conv2", conv3x3(out, out, 1));
    bn1_ = register_module("bn1", nn::BatchNorm2d(preact ? in : out));
    bn2_ = register_module("bn2", nn::BatchNorm2d(out));
    if (stride != 1 || in != out) {
      shortcut_ = register_module(
          "shortcut", nn::Conv2d(nn::Conv2dOptions(in, out, 1).stride(stride).bias(false)));
      if (!preact) {
        shortcut_bn_ = register_module("shortcut_bn", nn::BatchNorm2d(out));
      }
    }
  }

  torch::Tensor forward(const torch::Tensor &x) {
    if (preact_) {
      const auto a = torch::relu(bn1_->forward(x));
      const auto sc = shortcut_ ? shortcut_->forward(a) : x;
      auto h = conv1_->forward(a);
      h = conv2_->forward(torch::relu(bn2_->forward(h)));
      return h + sc;
    }
    auto h = torch::relu(bn1_->forward(conv1_->forward(x)));
    h = bn2_->forward(conv2_->forward(h));
    const auto sc = shortcut_ ? shortcut_bn_->forward(shortcut_->forward(x)) : x;
    return torch::relu(h + sc);
  }

private:
  bool preact_;
  nn::Conv2d conv1_{nullptr}, conv2_{nullptr}, shortcut_{nullptr};
  nn::BatchNorm2d bn1_{nullptr}, bn2_{nullptr}, shortcut_bn_{nullptr};
};
TORCH_MODULE(BasicBlock);

/// CIFAR-style ResNet18 (3x3 stem, no initial pooling); the pre-activation
/// variant moves BN/ReLU ahead of each convolution.
class ResNet18 : public ClassifierImpl {
public:
  ResNet18(int k, const InputSpec &in, bool preact)
      : ClassifierImpl(preact ? Arch::preact_resnet18 : Arch::resnet18, k, in), preact_(preact) {
    stem_ = register_module("stem", conv3x3(in.channels, 64, 1));
    if (!preact) {
      stem_bn_ = register_module("stem_bn", nn::BatchNorm2d(64));
    }
    int width = 64;
    for (int stage = 0; stage < 4; ++stage) {
      const int out = 64 << stage;
      const int stride = stage == 0 ? 1 : 2;
      blocks_->push_back(BasicBlock(width, out, stride, preact));
      blocks_->push_back(BasicBlock(out, out, 1, preact));
      width = out;
    }
    register_module("blocks", blocks_);
    if (preact) {
      final_bn_ = register_module("final_bn", nn::BatchNorm2d(512));
    }
    fc_ = register_module("fc", nn::Linear(512, k));
    init_mask(512);
  }

protected:
  torch::Tensor features(const torch::Tensor &x) override {
    auto h = stem_->forward(x);
    if (!preact_) {
      h = torch::relu(stem_bn_->forward(h));
    }
    for (const auto &b : *blocks_) {
      h = b->as<BasicBlock>()->forward(h);
    }
    return preact_ ? torch::relu(final_bn_->forward(h)) : h;
  }
  torch::Tensor head(const torch::Tensor &f) override {
    return fc_->forward(F::adaptive_avg_pool2d(f, F::AdaptiveAvgPool2dFuncOptions(1)).flatten(1));
  }

private:
  bool preact_;
  nn::Conv2d stem_{nullptr};
  nn::BatchNorm2d stem_bn_{nullptr}, final_bn_{nullptr};
  nn::ModuleList blocks_;
  nn::Linear fc_{nullptr};
};

} // namespace

Classifier build_classifier(Arch arch, int num_classes, const InputSpec &input) {
  switch (arch) {
  case Arch::simple_cnn: return std::make_shared<SimpleCnn>(num_classes, input);
  case Arch::resnet18: return std::make_shared<ResNet18>(num_classes, input, false);
  case Arch::preact_resnet18: return std::make_shared<ResNet18>(num_classes, input, true);
  }
  fail(ErrorKind::invalid_input, "unsupported arch");
}

Classifier clone(const Classifier &c) {
  auto out = build_classifier(c->arch(), c->num_classes(), c->input());
  torch::NoGradGuard guard;
  auto src_p = c->named_parameters();
  for (auto &p : out->named_parameters()) {
    p.value().copy_(src_p[p.key()]);
  }
  auto src_b = c->named_buffers();
  for (auto &b : out->named_buffers()) {
    b.value().copy_(src_b[b.key()]);
  }
  out->train(c->is_training());
  return out;
}

} // namespace flipnorm::models
