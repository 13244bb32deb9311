// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <random>
#include <vector>

#include "flipnorm/baseline.hpp"
#include "flipnorm/losses.hpp"

using namespace flipnorm;
using losses::NormalizationConfig;

namespace {

std::vector<double> random_logits(std::mt19937_64 &rng, std::size_t k, double sigma) {
  std::normal_distribution<double> dist(0.0, sigma);
  std::vector<double> z(k);
  for (auto &v : z) {
    v = dist(rng);
  }
  return z;
}

/// Central finite differences, h = 1e-4.
template <typename F> std::vector<double> numeric_grad(F f, std::vector<double> z) {
  constexpr double h = 1e-4;
  std::vector<double> g(z.size());
  for (std::size_t i = 0; i < z.size(); ++i) {
    const double keep = z[i];
    z[i] = keep + h;
    const double up = f(z);
    z[i] = keep - h;
    const double down = f(z);
    z[i] = keep;
    g[i] = (up - down) / (2 * h);
  }
  return g;
}

double relative_error(const std::vector<double> &a, const std::vector<double> &b) {
  double diff = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  return std::sqrt(diff) / std::max({std::sqrt(na), std::sqrt(nb), 1e-8});
}

std::span<const double> sp(const std::vector<double> &v) { return v; }

} // namespace

TEST(NormalizeLogits, ThreeFourFiveTriangle) {
  const std::vector<double> z{3.0, 4.0};
  const auto out = losses::normalize_logits(sp(z), {1.0, 1e-12});
  EXPECT_NEAR(out[0], 0.6, 1e-12);
  EXPECT_NEAR(out[1], 0.8, 1e-12);
}

TEST(NormalizeLogits, ZeroVectorStaysZero) {
  const std::vector<double> z(7, 0.0);
  const auto out = losses::normalize_logits(sp(z), {});
  for (double v : out) {
    EXPECT_EQ(v, 0.0);
  }
}

TEST(NormalizeLogits, DirectionIsScaleFree) {
  std::mt19937_64 rng(7);
  const auto z = random_logits(rng, 10, 3.0);
  auto scaled = z;
  for (auto &v : scaled) {
    v *= 37.5;
  }
  const auto a = losses::normalize_logits(sp(z), {});
  const auto b = losses::normalize_logits(sp(scaled), {});
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_NEAR(a[i], b[i], 1e-7);
  }
  EXPECT_NEAR(losses::l2_norm(sp(a)), 1.0, 1e-6);
}

TEST(NormalizeLogits, RejectsNonFinite) {
  const std::vector<double> z{1.0, NAN};
  EXPECT_THROW(losses::normalize_logits(sp(z), {}), Error);
  try {
    losses::normalize_logits(sp(z), {});
  } catch (const Error &e) {
    EXPECT_EQ(e.kind(), ErrorKind::invalid_input);
  }
}

TEST(LogitVector, MagnitudeAndDirection) {
  losses::LogitVector z({3.0, 4.0});
  EXPECT_DOUBLE_EQ(z.magnitude(), 5.0);
  const auto d = z.direction(0.0);
  EXPECT_DOUBLE_EQ(d[0], 0.6);
  EXPECT_THROW(losses::LogitVector({1.0}), Error);
  EXPECT_THROW(losses::LogitVector({1.0, INFINITY}), Error);
}

TEST(NormalizationConfig, Validation) {
  EXPECT_NO_THROW((NormalizationConfig{0.04, 1e-7}.validate()));
  EXPECT_THROW((NormalizationConfig{0.0, 1e-7}.validate()), Error);
  EXPECT_THROW((NormalizationConfig{0.04, 0.0}.validate()), Error);
  EXPECT_THROW((NormalizationConfig{0.04, 1e-2}.validate()), Error);
}

TEST(CrossEntropy, UniformLogits) {
  const std::vector<double> z(10, 0.3);
  EXPECT_NEAR(losses::cross_entropy(sp(z), 4), std::log(10.0), 1e-12);
}

TEST(CrossEntropy, ConfidentCorrect) {
  const std::vector<double> z{10.0, -10.0};
  // log(1 + e^-20)
  EXPECT_NEAR(losses::cross_entropy(sp(z), 0), 2.061153620314381e-09, 1e-15);
}

TEST(CrossEntropy, HandComputed) {
  const std::vector<double> z{0.0, 0.2};
  EXPECT_NEAR(losses::cross_entropy(sp(z), 0), 0.7981388693815918, 1e-12);
}

TEST(CrossEntropy, LabelOutOfRange) {
  const std::vector<double> z{0.0, 0.2};
  try {
    losses::cross_entropy(sp(z), 2);
    FAIL();
  } catch (const Error &e) {
    EXPECT_EQ(e.kind(), ErrorKind::invalid_label);
  }
  EXPECT_THROW(losses::cross_entropy(sp(z), -1), Error);
}

TEST(CrossEntropy, HugeLogitsStayFinite) {
  const std::vector<double> z{1e6, -1e6, 3e5};
  EXPECT_NEAR(losses::cross_entropy(sp(z), 1), 2e6, 1e-3);
}

TEST(LognormCE, UniformDirectionIsFixedPoint) {
  const std::vector<double> z(10, -2.5);
  for (double tau : {0.04, 0.5, 3.0}) {
    EXPECT_NEAR(losses::lognorm_ce(sp(z), 2, {tau, 1e-7}), std::log(10.0), 1e-9);
  }
}

TEST(LognormCE, HandComputed) {
  const std::vector<double> z{3.0, 4.0};
  // normalized logits (0.6, 0.8): log(1 + e^0.2)
  EXPECT_NEAR(losses::lognorm_ce(sp(z), 0, {1.0, 1e-7}), 0.7981388693815918, 1e-6);
}

TEST(LognormCE, ScaleInvarianceListed) {
  std::mt19937_64 rng(11);
  const NormalizationConfig cfg{0.04, 1e-7};
  for (int trial = 0; trial < 50; ++trial) {
    auto z = random_logits(rng, 10, 2.0);
    if (losses::l2_norm(sp(z)) < 1.0) {
      continue;
    }
    const double base = losses::lognorm_ce(sp(z), trial % 10, cfg);
    for (double lambda : {2.0, 10.0, 100.0}) {
      auto s = z;
      for (auto &v : s) {
        v *= lambda;
      }
      EXPECT_NEAR(losses::lognorm_ce(sp(s), trial % 10, cfg), base, 1e-6);
    }
  }
}

TEST(LnfLoss, UniformFullRange) {
  targets::TargetSpec spec{targets::AttackMode::fra, 1, targets::VicinityPolicy::cyclic, 3, {}};
  const std::vector<double> z(3, 1.0);
  EXPECT_NEAR(losses::lnf_loss(sp(z), targets::encode(spec, 1), {}), 2.0 * std::log(3.0), 1e-9);
}

TEST(LnfLoss, UniformNarrowRange) {
  targets::TargetSpec spec{targets::AttackMode::nra, 2, targets::VicinityPolicy::cyclic, 10, {}};
  const std::vector<double> z(10, -4.0);
  EXPECT_NEAR(losses::lnf_loss(sp(z), targets::encode(spec, 5), {}), 2.0 * std::log(10.0), 1e-9);
}

TEST(LnfLoss, RejectsBadEncodings) {
  const std::vector<double> z{1.0, 2.0, 3.0};
  targets::EncodedLabel zero{{0.0, 0.0, 0.0}, 0, targets::EncodingMode::flipped_full};
  try {
    losses::lnf_loss(sp(z), zero, {});
    FAIL();
  } catch (const Error &e) {
    EXPECT_EQ(e.kind(), ErrorKind::invalid_encoding);
  }
  targets::EncodedLabel on_truth{{1.0, 1.0, 0.0}, 0, targets::EncodingMode::flipped_full};
  EXPECT_THROW(losses::lnf_loss(sp(z), on_truth, {}), Error);
  targets::EncodedLabel short_enc{{0.0, 1.0}, 0, targets::EncodingMode::flipped_full};
  EXPECT_THROW(losses::lnf_loss(sp(z), short_enc, {}), Error);
}

TEST(LnfLoss, NonNegative) {
  std::mt19937_64 rng(5);
  targets::TargetSpec spec{targets::AttackMode::fra, 1, targets::VicinityPolicy::cyclic, 10, {}};
  for (int trial = 0; trial < 200; ++trial) {
    const auto z = random_logits(rng, 10, 5.0);
    EXPECT_GE(losses::lnf_loss(sp(z), targets::encode(spec, trial % 10), {}), 0.0);
  }
}

// Oracle: projected descent on the unit sphere driven by finite differences
// of the loss value only. The minimizer must put (almost) no mass on y and
// spread the rest evenly.
TEST(LnfLoss, MinimizerIsUniformOverFlippedClasses) {
  constexpr int k = 5;
  constexpr int y = 2;
  const NormalizationConfig cfg{0.04, 1e-7};
  targets::TargetSpec spec{targets::AttackMode::fra, 1, targets::VicinityPolicy::cyclic, k, {}};
  const auto enc = targets::encode(spec, y);
  auto f = [&](const std::vector<double> &u) { return losses::lnf_loss(sp(u), enc, cfg); };

  std::mt19937_64 rng(3);
  auto u = random_logits(rng, k, 1.0);
  auto project = [](std::vector<double> &v) {
    const double n = losses::l2_norm(sp(v));
    for (auto &x : v) {
      x /= n;
    }
  };
  project(u);
  double step = 1e-3;
  double value = f(u);
  for (int it = 0; it < 20000; ++it) {
    const auto g = numeric_grad(f, u);
    auto next = u;
    for (int i = 0; i < k; ++i) {
      next[i] -= step * g[i];
    }
    project(next);
    const double nv = f(next);
    if (nv < value) {
      u = next;
      value = nv;
      step *= 1.1;
    } else {
      step *= 0.5;
    }
  }
  std::vector<double> scaled(u);
  for (auto &v : scaled) {
    v /= cfg.tau;
  }
  const auto p = losses::softmax(sp(scaled));
  EXPECT_LT(p[y], 1e-6);
  for (int t = 0; t < k; ++t) {
    if (t != y) {
      EXPECT_NEAR(p[t], 1.0 / (k - 1), 1e-4);
    }
  }
  EXPECT_NEAR(value, (k - 1) * std::log(k - 1.0), 1e-4);
  // no random direction does better
  for (int trial = 0; trial < 500; ++trial) {
    auto r = random_logits(rng, k, 1.0);
    project(r);
    EXPECT_GE(f(r), value - 1e-9);
  }
}

TEST(TotalLoss, Arithmetic) {
  EXPECT_EQ(losses::total_loss(0, 0, 0, {1, 1, 5}), 0.0);
  EXPECT_EQ(losses::total_loss(0, 0, 0, {0.3, 2, 9}), 0.0);
  EXPECT_DOUBLE_EQ(losses::total_loss(0.5, 1.0, 2.0, {1, 1, 5}), 11.5);
  EXPECT_GE(losses::total_loss(0.2, 0.7, 1.3, {1, 1, 5}), losses::total_loss(0.2, 0.7, 1.3, {1, 1, 0}));
  EXPECT_THROW(losses::total_loss(NAN, 0, 0, {}), Error);
}

TEST(LossWeights, Validation) {
  EXPECT_NO_THROW((losses::LossWeights{1, 1, 5}.validate()));
  EXPECT_THROW((losses::LossWeights{0, 0, 0}.validate()), Error);
  EXPECT_THROW((losses::LossWeights{-1, 1, 1}.validate()), Error);
}

TEST(BatchMean, MeanReduction) {
  const std::vector<double> v{1.0, 2.0, 6.0};
  EXPECT_DOUBLE_EQ(losses::batch_mean(sp(v)), 3.0);
  EXPECT_THROW(losses::batch_mean(std::span<const double>{}), Error);
}

TEST(ScaleInvariance, ArgmaxOfSoftmaxUnchanged) {
  std::mt19937_64 rng(21);
  for (int trial = 0; trial < 1000; ++trial) {
    const auto z = random_logits(rng, 2 + trial % 20, 4.0);
    const auto base = losses::argmax(sp(losses::softmax(sp(z))));
    for (double lambda : {0.1, 1.0, 7.0, 100.0}) {
      auto s = z;
      for (auto &v : s) {
        v *= lambda;
      }
      EXPECT_EQ(losses::argmax(sp(losses::softmax(sp(s)))), base);
    }
  }
}

TEST(ScaleInvariance, LognormRobustOverLambdaRange) {
  std::mt19937_64 rng(22);
  std::uniform_real_distribution<double> lambda_dist(0.5, 100.0);
  const NormalizationConfig cfg{0.04, 1e-7};
  int checked = 0;
  while (checked < 1000) {
    const auto z = random_logits(rng, 10, 3.0);
    if (losses::l2_norm(sp(z)) < 1.0) {
      continue;
    }
    const int y = checked % 10;
    const double lambda = lambda_dist(rng);
    auto s = z;
    for (auto &v : s) {
      v *= lambda;
    }
    ASSERT_LE(std::abs(losses::lognorm_ce(sp(s), y, cfg) - losses::lognorm_ce(sp(z), y, cfg)), 1e-5);
    ++checked;
  }
}

TEST(NaiveFlip, UniformMatchesClosedForm) {
  const std::vector<double> z(3, 0.7);
  EXPECT_NEAR(baseline::naive_flip_loss(sp(z), 0), 2.0 * std::log(3.0), 1e-12);
}

TEST(NaiveFlip, NotScaleInvariant) {
  const std::vector<double> z{1.0, -0.5, 0.25, 2.0};
  auto doubled = z;
  for (auto &v : doubled) {
    v *= 2;
  }
  EXPECT_GT(std::abs(baseline::naive_flip_loss(sp(z), 3) - baseline::naive_flip_loss(sp(doubled), 3)),
            1e-3);
}

// ||z|| = 1, tau = 1, epsilon = 0: normalization is the identity, so the
// normalized flipped loss and the raw one must coincide.
TEST(NaiveFlip, MatchesLnfOnUnitSphere) {
  std::mt19937_64 rng(31);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t k = 2 + trial % 15;
    auto z = random_logits(rng, k, 1.0);
    const double n = losses::l2_norm(sp(z));
    for (auto &v : z) {
      v /= n;
    }
    const int y = trial % static_cast<int>(k);
    std::vector<double> w(k, 1.0);
    w[static_cast<std::size_t>(y)] = 0.0;
    const double lnf = losses::weighted_log_loss<double, double>(z, w, {true, 1.0, 0.0});
    EXPECT_NEAR(baseline::naive_flip_loss(sp(z), y), lnf, 1e-9);
  }
}

class GradientCheck : public ::testing::Test {
protected:
  std::mt19937_64 rng{1234};
  static constexpr int instances = 100;
  static constexpr double tolerance = 1e-3;

  int random_k() { return std::uniform_int_distribution<int>(2, 20)(rng); }
};

TEST_F(GradientCheck, CrossEntropy) {
  for (int i = 0; i < instances; ++i) {
    const int k = random_k();
    const auto z = random_logits(rng, k, 3.0);
    const int y = i % k;
    const auto fd = numeric_grad([&](const auto &v) { return losses::cross_entropy(sp(v), y); }, z);
    EXPECT_LE(relative_error(losses::cross_entropy_grad(sp(z), y), fd), tolerance);
  }
}

TEST_F(GradientCheck, LognormCE) {
  const NormalizationConfig cfg{0.04, 1e-7};
  for (int i = 0; i < instances; ++i) {
    const int k = random_k();
    const auto z = random_logits(rng, k, 3.0);
    const int y = i % k;
    const auto fd =
        numeric_grad([&](const auto &v) { return losses::lognorm_ce(sp(v), y, cfg); }, z);
    EXPECT_LE(relative_error(losses::lognorm_ce_grad(sp(z), y, cfg), fd), tolerance);
  }
}

TEST_F(GradientCheck, LnfLossBothModes) {
  const NormalizationConfig cfg{0.04, 1e-7};
  for (int i = 0; i < instances; ++i) {
    const int k = std::max(3, random_k());
    targets::TargetSpec spec{i % 2 ? targets::AttackMode::fra : targets::AttackMode::nra,
                             1 + i % (k - 1), targets::VicinityPolicy::cyclic, k, {}};
    const auto z = random_logits(rng, k, 3.0);
    const auto enc = targets::encode(spec, i % k);
    const auto fd = numeric_grad([&](const auto &v) { return losses::lnf_loss(sp(v), enc, cfg); }, z);
    EXPECT_LE(relative_error(losses::lnf_loss_grad(sp(z), enc, cfg), fd), tolerance);
  }
}

TEST_F(GradientCheck, NaiveFlip) {
  for (int i = 0; i < instances; ++i) {
    const int k = random_k();
    const auto z = random_logits(rng, k, 3.0);
    const int y = i % k;
    const auto fd =
        numeric_grad([&](const auto &v) { return baseline::naive_flip_loss(sp(v), y); }, z);
    EXPECT_LE(relative_error(baseline::naive_flip_loss_grad(sp(z), y), fd), tolerance);
  }
}

TEST(Losses, FloatInstantiation) {
  const std::vector<float> z{0.0f, 0.2f};
  EXPECT_NEAR(losses::cross_entropy(std::span<const float>(z), 0), 0.7981389f, 1e-6f);
}
