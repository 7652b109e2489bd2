#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "shakelab/errors.hpp"
#include "shakelab/rng.hpp"
#include "shakelab/tensor.hpp"

using namespace shakelab;

namespace {

TEST(Rng, SameSeedSameSequence) {
  RngStream a(42), b(42), c(43);
  for (int i = 0; i < 100; ++i) {
    const auto x = a.next_u64();
    EXPECT_EQ(x, b.next_u64());
    EXPECT_NE(x, c.next_u64());
  }
}

TEST(Rng, CounterRestoresPosition) {
  RngStream a(7);
  for (int i = 0; i < 13; ++i) a.uniform();
  RngStream b(7, a.counter());
  EXPECT_EQ(a.uniform(), b.uniform());
  EXPECT_EQ(a.normal(), b.normal());
}

TEST(Rng, DerivedStreamsDiffer) {
  std::set<std::uint64_t> firsts;
  for (std::uint64_t k = 0; k < 50; ++k) {
    firsts.insert(RngStream::derive(1, {k}).next_u64());
    firsts.insert(RngStream::derive(1, {k, 0}).next_u64());
  }
  EXPECT_EQ(firsts.size(), 100u);
  EXPECT_EQ(RngStream::derive(9, {1, 2}), RngStream::derive(9, {1, 2}));
}

TEST(Rng, UniformMomentsAndRange) {
  RngStream r(3);
  double s = 0, s2 = 0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    const double u = r.uniform();
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
    s += u;
    s2 += u * u;
  }
  EXPECT_NEAR(s / n, 0.5, 0.005);
  EXPECT_NEAR(s2 / n - 0.25, 1.0 / 12, 0.002);
  EXPECT_EQ(r.uniform(0.3, 0.3), 0.3);
  for (int i = 0; i < 1000; ++i) {
    const double u = r.uniform(0.3, 0.7);
    ASSERT_GE(u, 0.3);
    ASSERT_LT(u, 0.7);
  }
}

TEST(Rng, NormalMoments) {
  RngStream r(5);
  double s = 0, s2 = 0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    const double z = r.normal();
    s += z;
    s2 += z * z;
  }
  EXPECT_NEAR(s / n, 0.0, 0.01);
  EXPECT_NEAR(s2 / n, 1.0, 0.02);
}

TEST(Rng, BelowIsBoundedAndCoversRange) {
  RngStream r(11);
  std::vector<int> counts(7, 0);
  for (int i = 0; i < 7000; ++i) {
    const auto k = r.below(7);
    ASSERT_LT(k, 7u);
    ++counts[k];
  }
  for (int c : counts) EXPECT_GT(c, 800);
}

TEST(Tensor, ShapeAndAccess) {
  Tensor<float> t({2, 3, 4, 5}, 1.5f);
  EXPECT_EQ(t.size(), 120u);
  EXPECT_EQ(t.rank(), 4u);
  t.at(1, 2, 3, 4) = 7.0f;
  EXPECT_EQ(t[119], 7.0f);
  EXPECT_EQ(shape_string(t.shape()), "[2x3x4x5]");
  EXPECT_TRUE(t.all_finite());
  t[0] = std::nanf("");
  EXPECT_FALSE(t.all_finite());
}

TEST(Tensor, ReshapeAndCast) {
  Tensor<double> t({2, 3}, std::vector<double>{1, 2, 3, 4, 5, 6});
  const auto r = t.reshaped({3, 2});
  EXPECT_EQ(r.shape(), (Shape{3, 2}));
  EXPECT_EQ(r[5], 6.0);
  EXPECT_THROW(t.reshaped({4, 2}), ConfigError);
  const auto f = t.cast<float>();
  EXPECT_EQ(f[2], 3.0f);
}

TEST(Tensor, RejectsBadShapes) {
  EXPECT_THROW(Tensor<float>({2, 0, 3}), ConfigError);
  EXPECT_THROW(Tensor<float>({2, 2}, std::vector<float>{1, 2, 3}), ConfigError);
  Tensor<float> a({2}), b({3});
  EXPECT_THROW(a += b, ConfigError);
}

}  // namespace
