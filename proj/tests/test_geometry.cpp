#include <gtest/gtest.h>

#include <complex>
#include <vector>

#include "evac/geometry.hpp"

using namespace evac;

TEST(Vec2, UnitHasNormOne) {
  RngStream rng(11);
  for (int k = 0; k < 1000; ++k) {
    const Vec2 v{rng.uniform(-5, 5), rng.uniform(-5, 5)};
    if (norm(v) == 0.0) continue;
    EXPECT_NEAR(norm(unit(v)), 1.0, 1e-15);
  }
  EXPECT_EQ(unit(Vec2{}), Vec2{});
}

TEST(Angle, CanonicalizeIsPeriodicAndInRange) {
  RngStream rng(3);
  for (int k = 0; k < 10000; ++k) {
    const double t = rng.uniform(-50, 50);
    const double c = canonicalize(t);
    EXPECT_GT(c, -kPi);
    EXPECT_LE(c, kPi);
    EXPECT_NEAR(canonicalize(t + 2 * kPi), c, 1e-12);
    EXPECT_NEAR(std::sin(c), std::sin(t), 1e-12);
    EXPECT_NEAR(std::cos(c), std::cos(t), 1e-12);
  }
  EXPECT_DOUBLE_EQ(canonicalize(kPi), kPi);
  EXPECT_DOUBLE_EQ(canonicalize(-kPi), kPi);
}

TEST(CircularMean, Examples) {
  const std::vector<double> quarter = {0.0, kPi / 2};
  EXPECT_NEAR(*circular_mean(quarter), kPi / 4, 1e-15);
  for (double t : {-3.0, -1.0, 0.0, 0.4, 2.5, kPi}) {
    const std::vector<double> one = {t};
    EXPECT_EQ(*circular_mean(one), canonicalize(t));
  }
  const std::vector<double> opposite = {0.0, kPi};
  EXPECT_FALSE(circular_mean(opposite).has_value());
  EXPECT_THROW(circular_mean(std::vector<double>{}), std::invalid_argument);
}

TEST(CircularMean, RotationInvariant) {
  RngStream rng(5);
  for (int k = 0; k < 2000; ++k) {
    std::vector<double> a(1 + rng.index(6));
    for (double& x : a) x = rng.uniform(-kPi, kPi);
    const double c = rng.uniform(-10, 10);
    std::vector<double> b = a;
    for (double& x : b) x += c;
    const auto ma = circular_mean(a);
    const auto mb = circular_mean(b);
    ASSERT_EQ(ma.has_value(), mb.has_value());
    if (!ma) continue;
    const double diff = canonicalize(*mb - canonicalize(*ma + c));
    EXPECT_NEAR(diff, 0.0, 1e-9);
  }
}

TEST(WeightedCircularMean, Examples) {
  const std::vector<double> a = {0.3, 1.7};
  const std::vector<double> w10 = {1.0, 0.0};
  EXPECT_EQ(*weighted_circular_mean(a, w10), 0.3);

  const std::vector<double> b = {0.0, kPi / 2};
  const std::vector<double> q1 = {1.0, 0.0};
  EXPECT_EQ(*weighted_circular_mean(b, q1), 0.0);

  const std::vector<double> w = {0.25, 0.75};
  const double expected = std::atan2(0.75, 0.25);
  EXPECT_NEAR(*weighted_circular_mean(b, w), expected, 1e-15);
  EXPECT_NEAR(expected, 1.2490, 5e-5);
  // same value from averaging unit vectors
  const Vec2 avg = 0.25 * direction(0.0) + 0.75 * direction(kPi / 2);
  EXPECT_NEAR(*weighted_circular_mean(b, w), std::atan2(avg.y, avg.x), 1e-15);
}

TEST(WeightedCircularMean, Errors) {
  const std::vector<double> a = {0.1, 0.2};
  EXPECT_THROW(weighted_circular_mean(a, std::vector<double>{1.0}), std::invalid_argument);
  EXPECT_THROW(weighted_circular_mean(a, std::vector<double>{0.0, 0.0}), std::invalid_argument);
  EXPECT_THROW(weighted_circular_mean(a, std::vector<double>{1.0, -1.0}), std::invalid_argument);
  EXPECT_THROW(weighted_circular_mean(std::vector<double>{}, std::vector<double>{}),
               std::invalid_argument);
  const std::vector<double> opposite = {0.0, kPi};
  EXPECT_FALSE(weighted_circular_mean(opposite, std::vector<double>{2.0, 2.0}).has_value());
}

TEST(WeightedCircularMean, MatchesComplexSum) {
  RngStream rng(17);
  int checked = 0;
  for (int k = 0; k < 10000; ++k) {
    const std::size_t n = 1 + rng.index(8);
    std::vector<double> a(n);
    std::vector<double> w(n);
    for (std::size_t i = 0; i < n; ++i) {
      a[i] = rng.uniform(-3 * kPi, 3 * kPi);
      w[i] = rng.uniform(0.0, 2.0);
    }
    std::complex<double> z{};
    for (std::size_t i = 0; i < n; ++i) z += w[i] * std::polar(1.0, a[i]);
    if (std::abs(z) <= 1e-9) continue;
    const double got = *weighted_circular_mean(a, w);
    EXPECT_NEAR(canonicalize(got - std::arg(z)), 0.0, 1e-12);
    ++checked;
  }
  EXPECT_GT(checked, 9900);
}

TEST(RngStream, SameSeedSameSequence) {
  RngStream a(42);
  RngStream b(42);
  for (int k = 0; k < 1000; ++k) {
    ASSERT_EQ(a.next_u64(), b.next_u64());
    ASSERT_EQ(a.uniform(), b.uniform());
    ASSERT_EQ(a.normal(), b.normal());
  }
  RngStream c(43);
  RngStream d(42);
  EXPECT_NE(c.next_u64(), d.next_u64());
}

TEST(RngStream, EngineIsStandardMt19937_64) {
  // 10000th output for the default seed is fixed by the C++ standard.
  RngStream s(5489);
  std::uint64_t v = 0;
  for (int k = 0; k < 10000; ++k) v = s.next_u64();
  EXPECT_EQ(v, 9981545732273789042ULL);
}

TEST(RngStream, UniformRange) {
  RngStream rng(9);
  for (int k = 0; k < 100000; ++k) {
    const double u = rng.uniform();
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
    const std::size_t i = rng.index(7);
    ASSERT_LT(i, 7u);
  }
}

TEST(RngStream, DerivedSeedsDiffer) {
  EXPECT_NE(derive_seed(1, 0), derive_seed(1, 1));
  EXPECT_NE(derive_seed(1, 0), derive_seed(2, 0));
  EXPECT_EQ(derive_seed(7, 3), derive_seed(7, 3));
}

TEST(UniformNoise, Examples) {
  RngStream rng(1);
  for (int k = 0; k < 1000; ++k) EXPECT_EQ(uniform_noise(rng, 0.0), 0.0);
  for (int k = 0; k < 100000; ++k) {
    const double z = uniform_noise(rng, 0.2);
    ASSERT_GE(z, -0.1);
    ASSERT_LE(z, 0.1);
  }
  EXPECT_THROW(uniform_noise(rng, -0.1), std::invalid_argument);
}

TEST(UniformNoise, MeanWithinCltBound) {
  RngStream rng(2024);
  const int n = 1000000;
  double sum = 0.0;
  for (int k = 0; k < n; ++k) sum += uniform_noise(rng, 0.2);
  // 3 sigma / sqrt(n) with sigma = eta / sqrt(12) is about 1.7e-4
  EXPECT_LT(3.0 * (0.2 / std::sqrt(12.0)) / std::sqrt(double(n)), 3e-4);
  EXPECT_NEAR(sum / n, 0.0, 3e-4);
}
