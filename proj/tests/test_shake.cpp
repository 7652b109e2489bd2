#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "shakelab/errors.hpp"
#include "shakelab/ops.hpp"
#include "shakelab/shake.hpp"
#include "shakelab/verify.hpp"
#include "test_support.hpp"

using namespace shakelab;

namespace {

TEST(BetaRule, TableExamples) {
  EXPECT_DOUBLE_EQ(beta_rule(BackwardMode::M1, 0.3, 0.9), 0.7);
  EXPECT_DOUBLE_EQ(beta_rule(BackwardMode::M2, 0.3, 0.5), 0.15);
  EXPECT_DOUBLE_EQ(beta_rule(BackwardMode::M3, 0.8, 0.5), 0.65);
  EXPECT_DOUBLE_EQ(beta_rule(BackwardMode::Keep, 0.8, 0.1), 0.8);
  EXPECT_DOUBLE_EQ(beta_rule(BackwardMode::Even, 0.8, 0.1), 0.5);
  // Column choice at exactly 0.5 uses the alpha >= 0.5 formulas.
  EXPECT_DOUBLE_EQ(beta_rule(BackwardMode::M2, 0.5, 0.0), 0.5);
  EXPECT_DOUBLE_EQ(beta_rule(BackwardMode::M5, 0.5, 1.0), 0.5);
  EXPECT_DOUBLE_EQ(beta_rule(BackwardMode::M4, 0.2, 1.0), 0.8);
  EXPECT_DOUBLE_EQ(beta_rule(BackwardMode::M5, 0.2, 0.0), 0.8);
  EXPECT_THROW(beta_rule(BackwardMode::Shake, 0.2, 0.5), UsageError);
}

TEST(BetaRule, RangesHoldOnFullGrid) {
  const auto c = check_beta_rule_ranges(101);
  EXPECT_TRUE(c.passed) << c.measured;
}

TEST(BetaRule, M3PutsBetaBetweenAlphaAndHalf) {
  for (double a : {0.0, 0.1, 0.49, 0.5, 0.77, 1.0})
    for (double r : {0.0, 0.25, 1.0}) {
      const double b = beta_rule(BackwardMode::M3, a, r);
      EXPECT_GE(b, std::min(a, 0.5) - 1e-15);
      EXPECT_LE(b, std::max(a, 0.5) + 1e-15);
    }
}

TEST(ShakeConfig, ShortNamesRoundTrip) {
  for (const char* name : {"S-S-I", "E-E-B", "S-E-I", "S-K-B", "S-M3-I", "E-S-B", "S-M5-B"}) {
    EXPECT_EQ(ShakeConfig::from_short_name(name).short_name(), name);
  }
  EXPECT_THROW(ShakeConfig::from_short_name("S-X-I"), ConfigError);
  EXPECT_THROW(ShakeConfig::from_short_name("SSI"), ConfigError);
}

TEST(ShakeConfig, ValidationNamesField) {
  ShakeConfig c;
  c.alpha_lo = 0.8;
  c.alpha_hi = 0.2;
  try {
    c.validate();
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("alpha_lo"), std::string::npos);
  }
  c.alpha_lo = -0.1;
  c.alpha_hi = 0.5;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Sampling, BatchLevelSharesOneCoefficient) {
  const auto cfg = ShakeConfig::from_short_name("S-S-B");
  RngStream rng(1);
  const auto a = sample_alpha(cfg, 16, rng);
  for (double v : a) EXPECT_EQ(v, a[0]);
  const auto b = sample_beta(cfg, a, rng);
  for (double v : b) EXPECT_EQ(v, b[0]);
  EXPECT_NE(a[0], b[0]);
}

TEST(Sampling, ImageLevelDrawsPerImageWithinInterval) {
  auto cfg = ShakeConfig::from_short_name("S-S-I");
  cfg.alpha_lo = 0.3;
  cfg.alpha_hi = 0.7;
  RngStream rng(2);
  const auto a = sample_alpha(cfg, 64, rng);
  std::set<double> distinct(a.begin(), a.end());
  EXPECT_EQ(distinct.size(), 64u);
  for (double v : a) {
    EXPECT_GE(v, 0.3);
    EXPECT_LT(v, 0.7);
  }
}

TEST(Sampling, EvenKeepAndRules) {
  RngStream rng(3);
  const auto even = sample_alpha(ShakeConfig::from_short_name("E-E-I"), 4, rng);
  for (double v : even) EXPECT_EQ(v, 0.5);
  const auto keep_cfg = ShakeConfig::from_short_name("S-K-I");
  const auto a = sample_alpha(keep_cfg, 8, rng);
  EXPECT_EQ(sample_beta(keep_cfg, a, rng), a);
  const auto m1 = sample_beta(ShakeConfig::from_short_name("S-M1-I"), a, rng);
  for (std::size_t j = 0; j < a.size(); ++j) EXPECT_DOUBLE_EQ(m1[j], 1.0 - a[j]);
}

TEST(Schedule, BackwardBeforeForwardIsRejected) {
  ShakeSchedule s(ShakeConfig{}, RngStream(4));
  std::vector<ShakeCoefficients> blocks(2);
  EXPECT_THROW(s.sample_backward(blocks), UsageError);
  s.sample_forward(blocks, 3);
  s.sample_backward(blocks);
  EXPECT_EQ(blocks[1].stage, ShakeCoefficients::Stage::Backward);
  EXPECT_EQ(blocks[1].beta.size(), 3u);
  EXPECT_THROW(s.sample_backward(blocks), UsageError);
  EXPECT_THROW(s.sample_forward(blocks, 0), UsageError);
}

TEST(Schedule, SameSeedSameCoefficients) {
  std::vector<ShakeCoefficients> x(3), y(3);
  ShakeSchedule a(ShakeConfig{}, RngStream(5)), b(ShakeConfig{}, RngStream(5));
  a.sample_forward(x, 4);
  b.sample_forward(y, 4);
  a.sample_backward(x);
  b.sample_backward(y);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(x[i].alpha, y[i].alpha);
    EXPECT_EQ(x[i].beta, y[i].beta);
  }
}

TEST(Combine, ForwardIsAffinePerImage) {
  RngStream rng(6);
  const auto s = shakelab::testing::random_tensor({2, 1, 2, 2}, rng);
  const auto x1 = shakelab::testing::random_tensor({2, 1, 2, 2}, rng);
  const auto x2 = shakelab::testing::random_tensor({2, 1, 2, 2}, rng);
  ShakeCoefficients c;
  c.alpha = {0.2, 0.9};
  c.stage = ShakeCoefficients::Stage::Forward;
  Tape<double> tape;
  const auto y = shake_combine(tape.input(s), tape.input(x1), tape.input(x2), c, Phase::Train);
  const auto t = shake_combine(tape.input(s), tape.input(x1), tape.input(x2), c, Phase::Test);
  for (std::size_t i = 0; i < 8; ++i) {
    const double a = c.alpha[i / 4];
    EXPECT_NEAR(y.value()[i], s[i] + a * x1[i] + (1 - a) * x2[i], 1e-15);
    EXPECT_NEAR(t.value()[i], s[i] + 0.5 * x1[i] + 0.5 * x2[i], 1e-15);
  }
}

TEST(Combine, BackwardContractIsBitwise) {
  EXPECT_TRUE(check_backward_contract<float>(false).passed);
  EXPECT_TRUE(check_backward_contract<double>(false).passed);
  EXPECT_FALSE(check_backward_contract<double>(true).passed);
}

TEST(Combine, BackwardReadsBetaAtBackwardTime) {
  Tape<double> tape;
  auto x1 = tape.input(Tensor<double>({1, 1}, 1.0), true);
  auto x2 = tape.input(Tensor<double>({1, 1}, 1.0), true);
  ShakeCoefficients c;
  c.alpha = {0.3};
  c.stage = ShakeCoefficients::Stage::Forward;
  auto y = shake_combine(Var<double>{}, x1, x2, c, Phase::Train);
  c.beta = {0.9};
  c.stage = ShakeCoefficients::Stage::Backward;
  tape.backward(ops::sum(y));
  EXPECT_DOUBLE_EQ(tape.grad(x1.id())[0], 0.9);
  EXPECT_NEAR(tape.grad(x2.id())[0], 0.1, 1e-15);
}

TEST(Combine, MissingCoefficientsAreUsageErrors) {
  Tape<double> tape;
  auto x1 = tape.input(Tensor<double>({2, 1}, 1.0), true);
  auto x2 = tape.input(Tensor<double>({2, 1}, 1.0), true);
  ShakeCoefficients c;
  EXPECT_THROW(shake_combine(Var<double>{}, x1, x2, c, Phase::Train), UsageError);
  c.alpha = {0.5, 0.5};
  c.stage = ShakeCoefficients::Stage::Forward;
  auto y = shake_combine(Var<double>{}, x1, x2, c, Phase::Train);
  EXPECT_THROW(tape.backward(ops::sum(y)), UsageError);
}

TEST(Combine, ShapeMismatchIsRejected) {
  Tape<double> tape;
  ShakeCoefficients c;
  EXPECT_THROW(shake_combine(Var<double>{}, tape.input(Tensor<double>({2, 1})),
                             tape.input(Tensor<double>({2, 2})), c, Phase::Test),
               ConfigError);
}

// The expectation of alpha * x1 + (1 - alpha) * x2 over alpha ~ U(0, 1) is
// the even combination.
TEST(Combine, ForwardExpectationIsEvenCombination) {
  RngStream rng(8);
  const auto x1 = shakelab::testing::random_tensor({1, 2, 3, 3}, rng);
  const auto x2 = shakelab::testing::random_tensor({1, 2, 3, 3}, rng);
  const auto cfg = ShakeConfig::from_short_name("S-S-I");
  ShakeSchedule sched(cfg, RngStream(9));
  const int reps = 10000;
  Tensor<double> s1(x1.shape()), s2(x1.shape());
  for (int k = 0; k < reps; ++k) {
    std::vector<ShakeCoefficients> c(1);
    sched.sample_forward(c, 1);
    Tape<double> tape;
    const auto y = shake_combine(Var<double>{}, tape.input(x1), tape.input(x2), c[0], Phase::Train);
    for (std::size_t i = 0; i < y.value().size(); ++i) {
      s1[i] += y.value()[i];
      s2[i] += y.value()[i] * y.value()[i];
    }
  }
  for (std::size_t i = 0; i < x1.size(); ++i) {
    const double mean = s1[i] / reps;
    const double sd = std::sqrt(std::max(s2[i] / reps - mean * mean, 0.0));
    EXPECT_NEAR(mean, 0.5 * (x1[i] + x2[i]), 5 * sd / std::sqrt(reps) + 1e-12);
  }
}

TEST(Parse, ModeNames) {
  EXPECT_EQ(parse_backward_mode("m4"), BackwardMode::M4);
  EXPECT_EQ(parse_backward_mode("keep"), BackwardMode::Keep);
  EXPECT_EQ(parse_forward_mode("even"), ForwardMode::Even);
  EXPECT_EQ(parse_level("image"), Level::Image);
  EXPECT_THROW(parse_level("pixel"), ConfigError);
}

}  // namespace
