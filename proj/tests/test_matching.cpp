#include <gtest/gtest.h>

#include <chrono>
#include <limits>
#include <random>

#include "detective/matching.hpp"

namespace detective {
namespace {

CostMatrix random_costs(std::size_t rows, std::size_t cols, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 10.0);
  CostMatrix c(rows, cols);
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) c(i, j) = u(rng);
  return c;
}

bool is_permutation_of(const std::vector<std::size_t>& g, std::size_t n) {
  std::vector<bool> seen(n, false);
  for (std::size_t j : g) {
    if (j >= n || seen[j]) return false;
    seen[j] = true;
  }
  return true;
}

Prediction prediction(std::vector<double> p_cls, BoxOffsets loc) {
  return Prediction{std::move(p_cls), loc, Tensor()};
}

TEST(PairCost, Examples) {
  const TargetLabel t{1, {0.2, 0.3, 0.4, 0.1}};
  const MatchWeights mu;
  EXPECT_EQ(pair_cost(t, prediction({0.1, 0.2, 0.7}, t.loc), mu), 0.0);
  EXPECT_EQ(pair_cost({0, {0, 0, 0, 0}}, prediction({1, 0, 0}, {0.5, 0.5, 0.5, 0.5}), mu), 16.0);
}

TEST(PairCost, ClassTermClampsZeroProbability) {
  const TargetLabel t{2, {0.5, 0.5, 0.2, 0.2}};
  const double c = pair_cost(t, prediction({0.5, 0.5, 0.0}, t.loc), {1.0, 0.0});
  EXPECT_DOUBLE_EQ(c, -std::log(1e-12));
}

TEST(PairCost, DefaultIgnoresClassProbabilities) {
  std::mt19937_64 rng(31);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 200; ++trial) {
    const TargetLabel t{static_cast<std::size_t>(trial % 3), {u(rng), u(rng), u(rng), u(rng)}};
    const BoxOffsets loc{u(rng), u(rng), u(rng), u(rng)};
    std::vector<double> a{u(rng), u(rng), u(rng)}, b{u(rng), 0.0, u(rng)};
    EXPECT_EQ(pair_cost(t, prediction(a, loc), MatchWeights{}),
              pair_cost(t, prediction(b, loc), MatchWeights{}));
  }
}

TEST(BuildCostMatrix, ShapesAndColumns) {
  const std::vector<TargetLabel> none;
  const std::vector<Prediction> preds{prediction({1, 0}, {0.1, 0.1, 0.1, 0.1}),
                                      prediction({1, 0}, {0.1, 0.1, 0.1, 0.1}),
                                      prediction({1, 0}, {0.9, 0.2, 0.1, 0.3})};
  EXPECT_EQ(build_cost_matrix(none, preds, {}).rows(), 0u);

  const std::vector<TargetLabel> one{{0, {0.2, 0.2, 0.2, 0.2}}};
  const CostMatrix m = build_cost_matrix(one, preds, {});
  ASSERT_EQ(m.cols(), 1u);
  EXPECT_EQ(m(0, 0), pair_cost(one[0], preds[0], {}));

  const std::vector<TargetLabel> two{{0, {0.2, 0.2, 0.2, 0.2}}, {1, {0.5, 0.1, 0.3, 0.3}}};
  const CostMatrix wide = build_cost_matrix(two, preds, {}, 3);
  EXPECT_EQ(wide.cols(), 3u);
  for (std::size_t i = 0; i < 2; ++i) EXPECT_EQ(wide(i, 0), wide(i, 1));  // duplicate predictions
  EXPECT_THROW(build_cost_matrix(two, preds, {}, 4), std::invalid_argument);
}

TEST(Hungarian, Examples) {
  Assignment a = hungarian(CostMatrix::from_rows({{0, 1}, {1, 0}}));
  EXPECT_EQ(a.target_to_prediction, (std::vector<std::size_t>{0, 1}));
  EXPECT_EQ(a.total_cost, 0.0);

  a = hungarian(CostMatrix::from_rows({{4, 1, 3}, {2, 0, 5}, {3, 2, 2}}));
  EXPECT_EQ(a.target_to_prediction, (std::vector<std::size_t>{1, 0, 2}));
  EXPECT_EQ(a.total_cost, 5.0);

  a = hungarian(CostMatrix::from_rows({{3.5}}));
  EXPECT_EQ(a.target_to_prediction, (std::vector<std::size_t>{0}));
  EXPECT_EQ(a.total_cost, 3.5);

  a = hungarian(CostMatrix());
  EXPECT_TRUE(a.target_to_prediction.empty());
  EXPECT_EQ(a.total_cost, 0.0);
}

TEST(Hungarian, Errors) {
  EXPECT_THROW(hungarian(CostMatrix(2, 3)), std::invalid_argument);
  CostMatrix bad(2, 2);
  bad(1, 0) = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(hungarian(bad), std::invalid_argument);
  bad(1, 0) = std::numeric_limits<double>::infinity();
  EXPECT_THROW(hungarian(bad), std::invalid_argument);
  EXPECT_THROW(brute_force_assign(CostMatrix(9, 9)), std::invalid_argument);
}

TEST(BruteForce, ThreeByThreeByHand) {
  const Assignment a = brute_force_assign(CostMatrix::from_rows({{4, 1, 3}, {2, 0, 5}, {3, 2, 2}}));
  EXPECT_EQ(a.target_to_prediction, (std::vector<std::size_t>{1, 0, 2}));
  EXPECT_EQ(a.total_cost, 5.0);
}

TEST(Hungarian, MatchesBruteForceOnRandomMatrices) {
  std::mt19937_64 rng(32);
  for (std::size_t n = 1; n <= 7; ++n) {
    for (int trial = 0; trial < 300; ++trial) {
      const CostMatrix c = random_costs(n, n, rng);
      const Assignment h = hungarian(c);
      const Assignment b = brute_force_assign(c);
      ASSERT_TRUE(is_permutation_of(h.target_to_prediction, n));
      EXPECT_EQ(h.total_cost, b.total_cost) << "n=" << n << " trial " << trial;
      EXPECT_EQ(h.target_to_prediction, b.target_to_prediction);
    }
  }
}

TEST(Hungarian, TiesResolveToLexicographicallySmallestOptimum) {
  std::mt19937_64 rng(33);
  std::uniform_int_distribution<int> small(0, 2);
  for (std::size_t n = 2; n <= 7; ++n) {
    for (int trial = 0; trial < 300; ++trial) {
      CostMatrix c(n, n);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) c(i, j) = small(rng);
      const Assignment h = hungarian(c);
      const Assignment b = brute_force_assign(c);
      EXPECT_EQ(h.total_cost, b.total_cost);
      EXPECT_EQ(h.target_to_prediction, b.target_to_prediction) << "n=" << n;
    }
  }
  const Assignment flat = hungarian(CostMatrix(5, 5, 1.0));
  EXPECT_EQ(flat.target_to_prediction, (std::vector<std::size_t>{0, 1, 2, 3, 4}));
}

TEST(Hungarian, InvariantUnderRowAndColumnShifts) {
  std::mt19937_64 rng(34);
  std::uniform_real_distribution<double> shift(-5.0, 5.0);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 2 + trial % 6;
    const CostMatrix c = random_costs(n, n, rng);
    CostMatrix shifted = c;
    for (std::size_t i = 0; i < n; ++i) {
      const double s = shift(rng);
      for (std::size_t j = 0; j < n; ++j) shifted(i, j) += s;
    }
    for (std::size_t j = 0; j < n; ++j) {
      const double s = shift(rng);
      for (std::size_t i = 0; i < n; ++i) shifted(i, j) += s;
    }
    EXPECT_EQ(hungarian(c).target_to_prediction, hungarian(shifted).target_to_prediction);
  }
}

TEST(Hungarian, PermutedRowsKeepTheMinimum) {
  std::mt19937_64 rng(35);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 2 + trial % 6;
    const CostMatrix c = random_costs(n, n, rng);
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng);
    CostMatrix p(n, n);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) p(i, j) = c(order[i], j);
    EXPECT_NEAR(hungarian(c).total_cost, hungarian(p).total_cost, 1e-12);
    EXPECT_EQ(brute_force_assign(p).total_cost, hungarian(p).total_cost);
  }
}

TEST(Hungarian, LargeProblemIsFast) {
  std::mt19937_64 rng(36);
  const CostMatrix c = random_costs(64, 64, rng);
  const auto t0 = std::chrono::steady_clock::now();
  const Assignment a = hungarian(c);
  const double ms =
      std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  EXPECT_TRUE(is_permutation_of(a.target_to_prediction, 64));
  EXPECT_LT(ms, 50.0);
}

TEST(AssignRectangular, MatchesBruteForceOverColumnSubsets) {
  std::mt19937_64 rng(37);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t n = 1 + trial % 3, k = n + 1 + trial % 4;
    const CostMatrix c = random_costs(n, k, rng);
    const Assignment a = assign_rectangular(c);
    ASSERT_EQ(a.target_to_prediction.size(), n);
    // Oracle: square problem with zero-cost dummy rows, solved exhaustively.
    CostMatrix padded(k, k, 0.0);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < k; ++j) padded(i, j) = c(i, j);
    const Assignment b = brute_force_assign(padded);
    EXPECT_EQ(a.total_cost, assignment_cost(c, {b.target_to_prediction.begin(),
                                                b.target_to_prediction.begin() + n}));
    std::vector<bool> used(k, false);
    for (std::size_t j : a.target_to_prediction) {
      EXPECT_FALSE(used[j]);
      used[j] = true;
    }
  }
  EXPECT_THROW(assign_rectangular(CostMatrix(3, 2)), std::invalid_argument);
}

}  // namespace
}  // namespace detective
