#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "mpft/errors.hpp"
#include "mpft/objective/objective.hpp"

using namespace mpft;
using namespace mpft::objective;
using ad::Tensor;

namespace {

double plain_ce(const Tensor& logits, const std::vector<std::size_t>& labels) {
  ad::Tape tape;
  return ad::softmax_cross_entropy(tape.constant(logits), labels).value().item();
}

Tensor random_logits(std::size_t n, std::size_t c, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> d(0.0, 2.0);
  std::vector<double> v(n * c);
  for (double& x : v) x = d(rng);
  return Tensor({n, c}, v);
}

}  // namespace

TEST(LaLoss, UniformPriorsReduceToCrossEntropy) {
  const Tensor z = random_logits(6, 4, 1);
  const std::vector<std::size_t> y{0, 1, 2, 3, 1, 0};
  for (double tau : {0.0, 0.5, 1.0, 3.0}) {
    EXPECT_NEAR(la_loss_value(z, y, LossConfig{tau, {0.25, 0.25, 0.25, 0.25}}), plain_ce(z, y), 1e-12);
  }
}

TEST(LaLoss, ZeroTauReducesToCrossEntropy) {
  const Tensor z = random_logits(5, 3, 2);
  const std::vector<std::size_t> y{2, 1, 0, 0, 2};
  EXPECT_NEAR(la_loss_value(z, y, LossConfig{0.0, {0.7, 0.2, 0.1}}), plain_ce(z, y), 1e-12);
}

TEST(LaLoss, AnalyticTwoClassExample) {
  const double v = la_loss_value(Tensor::matrix({{0, 0}}), std::vector<std::size_t>{1}, LossConfig{1.0, {0.9, 0.1}});
  EXPECT_NEAR(v, -std::log(0.1), 1e-12);
  EXPECT_NEAR(v, 2.302585, 1e-6);
}

TEST(LaLoss, ConstantShiftInvariance) {
  const Tensor z = random_logits(4, 5, 3);
  Tensor shifted = z;
  for (double& x : shifted.mutable_data()) x += 7.25;
  const std::vector<std::size_t> y{4, 0, 3, 1};
  const LossConfig cfg{1.0, {0.5, 0.2, 0.15, 0.1, 0.05}};
  EXPECT_NEAR(la_loss_value(z, y, cfg), la_loss_value(shifted, y, cfg), 1e-12);
}

TEST(LaLoss, InvalidPriors) {
  const Tensor z = Tensor::matrix({{0, 0}});
  const std::vector<std::size_t> y{0};
  EXPECT_THROW(la_loss_value(z, y, LossConfig{1.0, {1.0, 0.0}}), ConfigError);
  EXPECT_THROW(la_loss_value(z, y, LossConfig{1.0, {0.5, 0.6}}), ConfigError);
  EXPECT_THROW(la_loss_value(z, y, LossConfig{-1.0, {0.5, 0.5}}), ConfigError);
}

TEST(LaLoss, PriorWidthMustMatchLogits) {
  EXPECT_THROW(la_loss_value(Tensor::matrix({{0, 0, 0}}), std::vector<std::size_t>{0}, LossConfig{1.0, {0.5, 0.5}}),
               DimensionError);
}

TEST(GroupAccuracy, PerfectPredictions) {
  const auto groups = data::partition_groups(std::vector<std::size_t>{1000, 30, 5});
  const std::vector<std::size_t> y{0, 0, 1, 1, 2};
  const auto acc = group_accuracies(y, y, groups, 3);
  EXPECT_EQ(*acc.head, 1.0);
  EXPECT_EQ(*acc.medium, 1.0);
  EXPECT_EQ(*acc.tail, 1.0);
  EXPECT_EQ(acc.overall, 1.0);
}

TEST(GroupAccuracy, MajorityPredictor) {
  const std::vector<std::size_t> counts{1000, 30, 5};
  const auto groups = data::partition_groups(counts);
  std::vector<std::size_t> y;
  for (std::size_t c = 0; c < 3; ++c) y.insert(y.end(), counts[c], c);
  const std::vector<std::size_t> pred(y.size(), 0);
  const auto acc = group_accuracies(pred, y, groups, 3);
  EXPECT_EQ(*acc.head, 1.0);
  EXPECT_EQ(*acc.medium, 0.0);
  EXPECT_EQ(*acc.tail, 0.0);
  EXPECT_NEAR(acc.overall, 1.0 / 3.0, 1e-12);
}

TEST(GroupAccuracy, AbsentClassIsExcluded) {
  const auto groups = data::partition_groups(std::vector<std::size_t>{60, 40, 3, 1});
  // Head = {0, 1}; class 1 has no test samples.
  ASSERT_EQ(groups.head, (std::vector<std::size_t>{0, 1}));
  const std::vector<std::size_t> y{0, 0, 2, 3};
  const std::vector<std::size_t> pred{0, 1, 2, 0};
  const auto acc = group_accuracies(pred, y, groups, 4);
  EXPECT_EQ(*acc.head, 0.5);
  EXPECT_FALSE(acc.per_class[1].has_value());
}

TEST(GroupAccuracy, EmptyGroupIsAbsent) {
  const auto groups = data::partition_groups(std::vector<std::size_t>{10, 10});
  const std::vector<std::size_t> y{0, 1};
  const auto acc = group_accuracies(std::vector<std::size_t>{0, 0}, y, groups, 2);
  EXPECT_FALSE(acc.medium.has_value());
  EXPECT_FALSE(acc.tail.has_value());
  EXPECT_EQ(acc.overall, *acc.head);
  EXPECT_EQ(acc.overall, 0.5);
}

TEST(Cosine, OrthogonalIdenticalAntipodal) {
  const std::vector<std::size_t> labels{0, 1};
  const std::vector<std::size_t> both{0, 1};
  EXPECT_NEAR(inter_class_cosine(Tensor::matrix({{1, 0}, {0, 1}}), labels, both).mean, 1.0, 1e-15);
  EXPECT_NEAR(inter_class_cosine(Tensor::matrix({{1, 2}, {1, 2}}), labels, both).mean, 0.0, 1e-15);
  EXPECT_NEAR(inter_class_cosine(Tensor::matrix({{1, 2}, {-1, -2}}), labels, both).mean, 2.0, 1e-15);
}

TEST(Cosine, UsesClassMeansAndCountsPairs) {
  const Tensor f = Tensor::matrix({{2, 0}, {0, 0}, {0, 3}, {-1, 0}});
  const std::vector<std::size_t> labels{0, 0, 1, 2};
  const std::vector<std::size_t> classes{0, 1, 2};
  const auto d = inter_class_cosine(f, labels, classes);
  EXPECT_EQ(d.pairs, 3u);
  EXPECT_NEAR(d.mean, (1.0 + 2.0 + 1.0) / 3.0, 1e-15);
}

TEST(Cosine, ZeroNormMeanSkipsPairs) {
  const Tensor f = Tensor::matrix({{1, 0}, {0, 1}, {0, 0}});
  const std::vector<std::size_t> labels{0, 1, 2};
  const auto d = inter_class_cosine(f, labels, std::vector<std::size_t>{0, 1, 2});
  EXPECT_EQ(d.pairs, 1u);
  EXPECT_EQ(d.skipped, 2u);
  EXPECT_NEAR(d.mean, 1.0, 1e-15);
}

TEST(Cosine, RelabelingAndScalingInvariance) {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> n;
  std::vector<double> v(12 * 3);
  for (double& x : v) x = n(rng);
  const Tensor f({12, 3}, v);
  std::vector<std::size_t> labels(12), relabeled(12);
  for (std::size_t i = 0; i < 12; ++i) {
    labels[i] = i % 4;
    relabeled[i] = 3 - labels[i];
  }
  Tensor scaled = f;
  for (double& x : scaled.mutable_data()) x *= 3.5;
  const std::vector<std::size_t> classes{0, 1, 2, 3};
  const double base = inter_class_cosine(f, labels, classes).mean;
  EXPECT_NEAR(inter_class_cosine(f, relabeled, classes).mean, base, 1e-12);
  EXPECT_NEAR(inter_class_cosine(scaled, labels, classes).mean, base, 1e-12);
  EXPECT_GE(base, 0.0);
  EXPECT_LE(base, 2.0);
}

TEST(Cosine, Preconditions) {
  const Tensor f = Tensor::matrix({{1, 0}, {0, 1}});
  const std::vector<std::size_t> labels{0, 0};
  EXPECT_THROW(inter_class_cosine(f, labels, std::vector<std::size_t>{0}), ContractError);
  EXPECT_THROW(inter_class_cosine(f, labels, std::vector<std::size_t>{0, 1}), ContractError);
}

TEST(Tte, IdenticalRunsMatchSingleRun) {
  const Tensor z = random_logits(7, 4, 5);
  const std::vector<Tensor> runs{z, z, z};
  EXPECT_EQ(tte_average(runs), argmax_rows(z));
}

TEST(Tte, MajorityWinsWithEqualMargins) {
  const Tensor a = Tensor::matrix({{2, 0}});
  const Tensor b = Tensor::matrix({{0, 2}});
  EXPECT_EQ(tte_average(std::vector<Tensor>{a, a, b}), (std::vector<std::size_t>{0}));
  EXPECT_EQ(tte_average(std::vector<Tensor>{b, a, b}), (std::vector<std::size_t>{1}));
}

TEST(Tte, PermutationInvariant) {
  const Tensor a = random_logits(9, 3, 6), b = random_logits(9, 3, 7), c = random_logits(9, 3, 8);
  const auto ref = tte_average(std::vector<Tensor>{a, b, c});
  EXPECT_EQ(tte_average(std::vector<Tensor>{c, a, b}), ref);
  EXPECT_EQ(tte_average(std::vector<Tensor>{b, c, a}), ref);
}

TEST(Tte, ShapeMismatch) {
  EXPECT_THROW(tte_average(std::vector<Tensor>{Tensor::zeros({2, 3}), Tensor::zeros({3, 3})}), ContractError);
}

TEST(Report, OverallIsMacroOfGroups) {
  const auto groups = data::partition_groups(std::vector<std::size_t>{1000, 30, 5});
  const Tensor logits = Tensor::matrix({{3, 0, 0}, {0, 1, 0}, {0, 2, 0}, {1, 0, 0}});
  const Tensor features = Tensor::matrix({{1, 0}, {0, 1}, {0, 1}, {1, 1}});
  const std::vector<std::size_t> y{0, 1, 1, 2};
  const auto r = build_report(logits, features, y, groups, LossConfig{1.0, data::class_priors(std::vector<std::size_t>{1000, 30, 5})});
  EXPECT_NEAR(r.accuracies.overall, (*r.accuracies.head + *r.accuracies.medium + *r.accuracies.tail) / 3.0, 1e-15);
  EXPECT_EQ(r.micro_accuracy, 0.75);
  EXPECT_FALSE(r.head_distance.has_value());
  EXPECT_TRUE(std::isfinite(r.la_loss));
}
