#include <gtest/gtest.h>

#include <functional>
#include <numeric>

#include "mpft/data/longtail.hpp"
#include "mpft/errors.hpp"
#include "mpft/search/search.hpp"

using namespace mpft;
using search::KnapsackInstance;

namespace {

// Independent optimum by dynamic programming over integer weights.
double dp_optimum(const KnapsackInstance& inst) {
  const auto cap = static_cast<std::size_t>(inst.capacity);
  std::vector<double> best(cap + 1, 0.0);
  for (std::size_t i = 0; i < inst.size(); ++i) {
    const auto w = static_cast<std::size_t>(inst.weights[i]);
    for (std::size_t c = cap + 1; c-- > w;) best[c] = std::max(best[c], best[c - w] + inst.values[i]);
  }
  return best[cap];
}

// Independent lexicographic enumeration: the first optimal indicator vector
// reached when 0 is tried before 1 at every position.
std::vector<bool> lex_first_optimum(const KnapsackInstance& inst, double optimum) {
  std::vector<bool> x(inst.size()), found;
  std::function<void(std::size_t, double, double)> walk = [&](std::size_t i, double v, double w) {
    if (!found.empty() || w > inst.capacity) return;
    if (i == inst.size()) {
      if (v == optimum) found = x;
      return;
    }
    x[i] = false;
    walk(i + 1, v, w);
    x[i] = true;
    walk(i + 1, v + inst.values[i], w + inst.weights[i]);
    x[i] = false;
  };
  walk(0, 0.0, 0.0);
  return found;
}

}  // namespace

TEST(Knapsack, ClassicInstance) {
  const KnapsackInstance inst{{60, 100, 120}, {10, 20, 30}, 50};
  const auto sel = search::solve_knapsack_bruteforce(inst);
  EXPECT_EQ(sel.objective, 220.0);
  EXPECT_EQ(sel.chosen, (std::vector<bool>{false, true, true}));
  EXPECT_EQ(dp_optimum(inst), 220.0);
}

TEST(Knapsack, ZeroCapacity) {
  const KnapsackInstance inst{{5, 7}, {1, 2}, 0};
  const auto sel = search::solve_knapsack_bruteforce(inst);
  EXPECT_EQ(sel.objective, 0.0);
  EXPECT_EQ(sel.chosen, (std::vector<bool>{false, false}));
}

TEST(Knapsack, SingleFittingItem) {
  const auto sel = search::solve_knapsack_bruteforce(KnapsackInstance{{42}, {3}, 5});
  EXPECT_EQ(sel.objective, 42.0);
  EXPECT_EQ(sel.chosen, (std::vector<bool>{true}));
}

TEST(Knapsack, TieBreakIsLexicographicallySmallest) {
  // {0} and {1} both reach 10; the indicator 01 precedes 10.
  const auto sel = search::solve_knapsack_bruteforce(KnapsackInstance{{10, 10}, {5, 5}, 5});
  EXPECT_EQ(sel.chosen, (std::vector<bool>{false, true}));
}

TEST(Knapsack, InvalidInstances) {
  EXPECT_THROW(search::solve_knapsack_bruteforce(KnapsackInstance{{1, 2}, {1}, 3}), SpecError);
  EXPECT_THROW(search::solve_knapsack_bruteforce(KnapsackInstance{{0}, {1}, 3}), SpecError);
  EXPECT_THROW(search::solve_knapsack_bruteforce(KnapsackInstance{{1}, {-1}, 3}), SpecError);
  KnapsackInstance big{std::vector<double>(25, 1.0), std::vector<double>(25, 1.0), 3};
  EXPECT_THROW(search::solve_knapsack_bruteforce(big), SizeError);
  KnapsackInstance mid{std::vector<double>(17, 1.0), std::vector<double>(17, 1.0), 3};
  EXPECT_THROW(search::verify_reduction(mid), SizeError);
}

TEST(Knapsack, AgreesWithIndependentOracles) {
  auto rng = data::make_rng(31, 0);
  for (int trial = 0; trial < 200; ++trial) {
    const auto inst = search::random_knapsack(1 + trial % 12, rng);
    const auto sel = search::solve_knapsack_bruteforce(inst);
    ASSERT_EQ(sel.objective, dp_optimum(inst)) << trial;
    ASSERT_EQ(sel.chosen, lex_first_optimum(inst, sel.objective)) << trial;
  }
}

TEST(Reduction, SizePreservingMapping) {
  const KnapsackInstance inst{{60, 100, 120}, {10, 20, 30}, 50};
  const auto p = search::reduce_knapsack(inst, Position::V, 0.5);
  ASSERT_EQ(p.candidates.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(p.candidates[i], (InsertionSite{i + 1, Position::V}));
    EXPECT_EQ(p.loss_terms[i], -inst.values[i]);
    EXPECT_EQ(p.costs[i], inst.weights[i]);
  }
  EXPECT_EQ(p.alpha, 0.5);
  EXPECT_EQ(p.budget, 50.0);
}

TEST(Reduction, FeasibilityExtremes) {
  const KnapsackInstance roomy{{1, 2, 3}, {4, 5, 6}, 15};
  EXPECT_TRUE(search::reduce_knapsack(roomy).feasible({true, true, true}));
  const KnapsackInstance tight{{1, 2, 3}, {4, 5, 6}, 3};
  const auto p = search::reduce_knapsack(tight);
  for (std::uint32_t mask = 1; mask < 8; ++mask) {
    EXPECT_FALSE(p.feasible({bool(mask & 4), bool(mask & 2), bool(mask & 1)}));
  }
  EXPECT_TRUE(p.feasible({false, false, false}));
  EXPECT_TRUE(search::verify_reduction(tight));
  EXPECT_EQ(search::solve_selection_bruteforce(p).objective, 0.0);
}

TEST(Reduction, DominantItem) {
  const KnapsackInstance inst{{1, 500, 2}, {3, 4, 3}, 4};
  EXPECT_TRUE(search::verify_reduction(inst));
  EXPECT_EQ(search::solve_knapsack_bruteforce(inst).chosen, (std::vector<bool>{false, true, false}));
}

TEST(Reduction, HundredRandomInstancesVerify) {
  auto rng = data::make_rng(7, 0x6b6e);
  std::uniform_int_distribution<std::size_t> size(1, 12);
  std::size_t verified = 0;
  for (int trial = 0; trial < 100; ++trial) verified += search::verify_reduction(search::random_knapsack(size(rng), rng));
  EXPECT_EQ(verified, 100u);
}
