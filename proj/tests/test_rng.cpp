#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "fedsim/errors.hpp"
#include "fedsim/rng.hpp"

namespace fedsim {
namespace {

TEST(Rng, SameSeedSameStream) {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(a.next_u64(), b.next_u64());
}

TEST(Rng, StreamSeedsSeparateTags) {
  EXPECT_NE(stream_seed(1, {0}), stream_seed(1, {1}));
  EXPECT_NE(stream_seed(1, {0, 1}), stream_seed(1, {1, 0}));
  EXPECT_EQ(stream_seed(9, {3, 4}), stream_seed(9, {3, 4}));
}

TEST(Rng, NormalMoments) {
  Rng rng(7);
  const int n = 200000;
  double sum = 0, sq = 0;
  for (int i = 0; i < n; ++i) {
    const double x = rng.normal();
    sum += x;
    sq += x * x;
  }
  EXPECT_NEAR(sum / n, 0.0, 0.01);
  EXPECT_NEAR(sq / n, 1.0, 0.02);
}

TEST(Rng, GammaMeanMatchesShape) {
  for (double shape : {0.3, 1.0, 4.5}) {
    Rng rng(11);
    double sum = 0;
    const int n = 100000;
    for (int i = 0; i < n; ++i) sum += rng.gamma(shape);
    EXPECT_NEAR(sum / n, shape, 0.03 * std::max(1.0, shape)) << "shape " << shape;
  }
}

TEST(Rng, DirichletOnSimplex) {
  Rng rng(3);
  for (int i = 0; i < 100; ++i) {
    const auto w = rng.dirichlet(10, 0.1);
    EXPECT_NEAR(std::accumulate(w.begin(), w.end(), 0.0), 1.0, 1e-12);
    for (double v : w) EXPECT_GE(v, 0.0);
  }
}

TEST(Rng, BelowIsUniform) {
  Rng rng(5);
  std::vector<int> counts(7, 0);
  const int n = 70000;
  for (int i = 0; i < n; ++i) ++counts[rng.below(7)];
  for (int c : counts) EXPECT_NEAR(c, n / 7, 400);
  EXPECT_THROW(rng.below(0), ContractError);
}

TEST(Rng, SampleWithoutReplacementIsDistinctAndSorted) {
  Rng rng(8);
  const auto s = rng.sample_without_replacement(50, 20);
  ASSERT_EQ(s.size(), 20u);
  for (std::size_t i = 1; i < s.size(); ++i) EXPECT_LT(s[i - 1], s[i]);
  EXPECT_LT(s.back(), 50u);
  EXPECT_THROW(rng.sample_without_replacement(3, 4), ContractError);
}

TEST(Rng, CategoricalSkipsZeroWeights) {
  Rng rng(2);
  const std::vector<double> w = {0.0, 1.0, 0.0, 3.0};
  std::vector<int> counts(4, 0);
  for (int i = 0; i < 40000; ++i) ++counts[rng.categorical(w)];
  EXPECT_EQ(counts[0], 0);
  EXPECT_EQ(counts[2], 0);
  EXPECT_NEAR(counts[3] / 40000.0, 0.75, 0.01);
}

}  // namespace
}  // namespace fedsim
