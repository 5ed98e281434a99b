#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "mpft/data/longtail.hpp"
#include "mpft/errors.hpp"

using namespace mpft;
using namespace mpft::data;

namespace {

std::vector<std::size_t> labels_from_counts(const std::vector<std::size_t>& counts) {
  std::vector<std::size_t> out;
  for (std::size_t c = 0; c < counts.size(); ++c) out.insert(out.end(), counts[c], c);
  return out;
}

std::vector<std::size_t> count_by_class(const std::vector<std::size_t>& labels,
                                        const std::vector<std::size_t>& idx, std::size_t classes) {
  std::vector<std::size_t> out(classes, 0);
  for (std::size_t i : idx) ++out[labels[i]];
  return out;
}

DatasetSpec spec3() {
  DatasetSpec s;
  s.num_classes = 3;
  s.n_max = 100;
  s.imbalance_ratio = 100.0;
  s.feature_dim = 4;
  s.tokens_per_sample = 2;
  s.seed = 5;
  return s;
}

}  // namespace

TEST(Generate, ExponentialProfileCounts) {
  EXPECT_EQ(spec3().class_counts(), (std::vector<std::size_t>{100, 10, 1}));
  const auto [source, target] = generate(spec3());
  EXPECT_EQ(target.class_counts, (std::vector<std::size_t>{100, 10, 1}));
  EXPECT_EQ(target.size(), 111u);
  EXPECT_EQ(target.features.shape(), (ad::Shape{111, 2, 4}));
  EXPECT_NO_THROW(target.validate());
  EXPECT_NO_THROW(source.validate());
}

TEST(Generate, SourceIsBalanced) {
  const auto [source, target] = generate(spec3());
  for (std::size_t n : source.class_counts) EXPECT_EQ(n, 100u);
}

TEST(Generate, RatioOneGivesEqualCounts) {
  DatasetSpec s = spec3();
  s.imbalance_ratio = 1.0;
  for (std::size_t n : s.class_counts()) EXPECT_EQ(n, 100u);
}

TEST(Generate, CountsNonIncreasingWithQuotedRatio) {
  DatasetSpec s;
  s.num_classes = 10;
  s.n_max = 500;
  s.imbalance_ratio = 50.0;
  const auto counts = s.class_counts();
  for (std::size_t c = 1; c < counts.size(); ++c) EXPECT_LE(counts[c], counts[c - 1]);
  EXPECT_EQ(counts.front(), 500u);
  EXPECT_EQ(counts.back(), 10u);
}

TEST(Generate, ZeroCountIsSpecError) {
  DatasetSpec s = spec3();
  s.n_max = 10;
  s.imbalance_ratio = 1000.0;
  EXPECT_THROW(s.class_counts(), SpecError);
  EXPECT_THROW(generate(s), SpecError);
}

TEST(Generate, NoShiftAndNoNoiseMakesSourceAndTargetAgree) {
  DatasetSpec s = spec3();
  s.noise = 0.0;
  const auto [source, target] = generate(s);
  // Without noise every sample equals its class prototype.
  const std::size_t row = 2 * 4;
  for (std::size_t c = 0; c < 3; ++c) {
    const auto src = std::find(source.labels.begin(), source.labels.end(), c) - source.labels.begin();
    const auto tgt = std::find(target.labels.begin(), target.labels.end(), c) - target.labels.begin();
    for (std::size_t j = 0; j < row; ++j) {
      EXPECT_EQ(source.features[src * row + j], target.features[tgt * row + j]);
    }
  }
}

TEST(Generate, RotationShiftMovesPrototypes) {
  DatasetSpec s = spec3();
  s.noise = 0.0;
  s.shift = RotationShift{1.0};
  const auto [source, target] = generate(s);
  double diff = 0.0;
  for (std::size_t j = 0; j < 8; ++j) diff += std::abs(source.features[j] - target.features[j]);
  EXPECT_GT(diff, 1e-6);
}

TEST(Generate, SameSeedIsBitIdentical) {
  const auto a = generate(spec3());
  const auto b = generate(spec3());
  EXPECT_TRUE(ad::bit_equal(a.second.features, b.second.features));
  EXPECT_EQ(a.second.labels, b.second.labels);
  EXPECT_TRUE(ad::bit_equal(generate_eval(spec3()).features, generate_eval(spec3()).features));
}

TEST(Generate, EvalSplitIsBalancedAndDistinct) {
  DatasetSpec s = spec3();
  s.eval_per_class = 7;
  const auto eval = generate_eval(s);
  EXPECT_EQ(eval.class_counts, (std::vector<std::size_t>{7, 7, 7}));
  const auto [source, target] = generate(s);
  EXPECT_NE(eval.features[0], target.features[0]);
}

TEST(Generate, MajorityPredictorAccuracyIsHeadShare) {
  const auto [source, target] = generate(spec3());
  const std::size_t hits = std::count(target.labels.begin(), target.labels.end(), 0u);
  EXPECT_EQ(static_cast<double>(hits) / static_cast<double>(target.size()), 100.0 / 111.0);
}

TEST(Groups, ThresholdArithmetic) {
  // Shares 1000/1035, 30/1035 and 5/1035 fall on either side of 5% and 1%.
  const auto g = partition_groups(std::vector<std::size_t>{1000, 30, 5});
  EXPECT_EQ(g.head, (std::vector<std::size_t>{0}));
  EXPECT_EQ(g.medium, (std::vector<std::size_t>{1}));
  EXPECT_EQ(g.tail, (std::vector<std::size_t>{2}));
  EXPECT_EQ(g.group_of(2), ClassGroups::Group::Tail);
}

TEST(Groups, UniformFourClassesAreAllHead) {
  const auto g = partition_groups(std::vector<std::size_t>{5, 5, 5, 5});
  EXPECT_EQ(g.head.size(), 4u);
  EXPECT_TRUE(g.medium.empty());
  EXPECT_TRUE(g.tail.empty());
}

TEST(Groups, TwoClassesDegenerate) {
  const auto g = partition_groups(std::vector<std::size_t>{1000, 5});
  EXPECT_EQ(g.head, (std::vector<std::size_t>{0}));
  EXPECT_TRUE(g.medium.empty());
  EXPECT_EQ(g.tail, (std::vector<std::size_t>{1}));
}

TEST(Groups, DisjointCover) {
  const std::vector<std::size_t> counts{400, 250, 160, 100, 63, 40, 25, 16, 10, 4};
  const auto g = partition_groups(counts);
  std::vector<int> seen(counts.size(), 0);
  for (const auto* set : {&g.head, &g.medium, &g.tail}) {
    for (std::size_t c : *set) ++seen[c];
  }
  for (int s : seen) EXPECT_EQ(s, 1);
}

TEST(Groups, BadFractionsAreConfigError) {
  EXPECT_THROW(partition_groups(std::vector<std::size_t>{3, 2}, 0.01, 0.05), ConfigError);
}

TEST(Priors, Examples) {
  const auto p = class_priors(std::vector<std::size_t>{100, 10, 1});
  EXPECT_DOUBLE_EQ(p[0], 100.0 / 111.0);
  EXPECT_DOUBLE_EQ(p[1], 10.0 / 111.0);
  EXPECT_DOUBLE_EQ(p[2], 1.0 / 111.0);
  EXPECT_NEAR(std::accumulate(p.begin(), p.end(), 0.0), 1.0, 1e-12);
  for (double v : class_priors(std::vector<std::size_t>{3, 3, 3, 3})) EXPECT_DOUBLE_EQ(v, 0.25);
  EXPECT_EQ(class_priors(std::vector<std::size_t>{7}), (std::vector<double>{1.0}));
}

TEST(Sampling, StratifiedTwentyPercent) {
  const auto labels = labels_from_counts({100, 10});
  auto rng = make_rng(1, 2);
  const auto idx = sample_outer_subset(labels, 2, RandomStratified{0.2}, rng);
  EXPECT_EQ(count_by_class(labels, idx, 2), (std::vector<std::size_t>{20, 2}));
  EXPECT_TRUE(std::is_sorted(idx.begin(), idx.end()));
  EXPECT_EQ(std::adjacent_find(idx.begin(), idx.end()), idx.end());
}

TEST(Sampling, StratifiedFractionWithinRounding) {
  const std::vector<std::size_t> counts{97, 31, 13, 5, 1};
  const auto labels = labels_from_counts(counts);
  auto rng = make_rng(4, 2);
  for (double ratio : {0.1, 0.2, 0.37, 0.9}) {
    const auto got = count_by_class(labels, sample_outer_subset(labels, 5, RandomStratified{ratio}, rng), 5);
    for (std::size_t c = 0; c < counts.size(); ++c) {
      const double n = static_cast<double>(counts[c]);
      EXPECT_GE(got[c], 1u);
      EXPECT_LE(std::abs(static_cast<double>(got[c]) / n - ratio), 1.0 / n + 1e-12);
    }
  }
}

TEST(Sampling, ClassBalancedClamps) {
  const auto labels = labels_from_counts({100, 3});
  auto rng = make_rng(1, 2);
  const auto idx = sample_outer_subset(labels, 2, ClassBalanced{5}, rng);
  EXPECT_EQ(count_by_class(labels, idx, 2), (std::vector<std::size_t>{5, 3}));
}

TEST(Sampling, TailHeavyFrequency) {
  const auto labels = labels_from_counts({100, 10});
  auto rng = make_rng(9, 2);
  std::size_t total = 0, tail = 0;
  while (total < 100000) {
    const auto idx = sample_outer_subset(labels, 2, TailHeavy{0.5}, rng);
    EXPECT_EQ(idx.size(), 55u);
    for (std::size_t i : idx) tail += labels[i] == 1;
    total += idx.size();
  }
  const double expected = (1.0 / 10) / (1.0 / 100 + 1.0 / 10);
  EXPECT_NEAR(static_cast<double>(tail) / static_cast<double>(total), expected, 0.02);
}

TEST(Sampling, ConsecutiveCallsDifferAndSeedsReproduce) {
  const auto labels = labels_from_counts({100, 10});
  auto rng = make_rng(3, 2);
  const auto first = sample_outer_subset(labels, 2, RandomStratified{0.2}, rng);
  const auto second = sample_outer_subset(labels, 2, RandomStratified{0.2}, rng);
  EXPECT_NE(first, second);
  auto again = make_rng(3, 2);
  EXPECT_EQ(sample_outer_subset(labels, 2, RandomStratified{0.2}, again), first);
}

TEST(Sampling, Errors) {
  const auto labels = labels_from_counts({4, 0, 2});
  auto rng = make_rng(1, 2);
  EXPECT_THROW(sample_outer_subset(labels, 3, RandomStratified{0.2}, rng), SamplingError);
  const auto ok = labels_from_counts({4, 2});
  EXPECT_THROW(sample_outer_subset(ok, 2, RandomStratified{0.0}, rng), SamplingError);
  EXPECT_THROW(sample_outer_subset(ok, 2, RandomStratified{1.0}, rng), SamplingError);
  EXPECT_THROW(sample_outer_subset(ok, 2, ClassBalanced{0}, rng), SamplingError);
}

TEST(Gather, CopiesRowsInOrder) {
  const auto [source, target] = generate(spec3());
  const std::vector<std::size_t> idx{110, 0, 5};
  const Batch b = gather(target, idx);
  EXPECT_EQ(b.labels, (std::vector<std::size_t>{2, 0, 0}));
  EXPECT_EQ(b.x.shape(), (ad::Shape{3, 2, 4}));
  for (std::size_t j = 0; j < 8; ++j) EXPECT_EQ(b.x[j], target.features[110 * 8 + j]);
}
