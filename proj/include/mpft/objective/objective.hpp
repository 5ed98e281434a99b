#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mpft/autodiff/ops.hpp"
#include "mpft/data/longtail.hpp"
#include "mpft/peft/site.hpp"

namespace mpft::objective {

struct LossConfig {
  double tau = 1.0;
  std::vector<double> priors;

  /// Priors strictly positive and summing to 1 within 1e-12; tau >= 0.
  void validate() const;
  /// Row vector tau * log(pi_c) added to every logit row.
  ad::Tensor adjustment() const;
};

/// Cross-entropy on logits shifted by tau * log(pi). Training-time only;
/// evaluation reads raw logits.
ad::Var la_loss(ad::Var logits, std::span<const std::size_t> labels, const LossConfig& cfg);

/// Untracked convenience returning the scalar loss value.
double la_loss_value(const ad::Tensor& logits, std::span<const std::size_t> labels,
                     const LossConfig& cfg);

std::vector<std::size_t> argmax_rows(const ad::Tensor& scores);

struct GroupAccuracies {
  std::optional<double> head, medium, tail;
  /// Mean of the groups that are present.
  double overall = 0.0;
  /// Per-class accuracy; empty when the class has no test samples.
  std::vector<std::optional<double>> per_class;
};

/// Per-class accuracy macro-averaged inside each group. Classes without test
/// samples are excluded; a group with no scored class is reported absent.
GroupAccuracies group_accuracies(std::span<const std::size_t> predictions,
                                 std::span<const std::size_t> labels,
                                 const data::ClassGroups& groups, std::size_t num_classes);

struct CosineDistance {
  double mean = 0.0;
  std::size_t pairs = 0;
  /// Pairs skipped because a class mean had zero norm.
  std::size_t skipped = 0;
};

/// Mean of 1 - cos(mu_i, mu_j) over unordered pairs of class means within
/// `classes`. Needs at least two classes, each with one feature or more.
CosineDistance inter_class_cosine(const ad::Tensor& features, std::span<const std::size_t> labels,
                                  std::span<const std::size_t> classes);

/// Argmax of the mean softmax probabilities across runs.
std::vector<std::size_t> tte_average(std::span<const ad::Tensor> logit_sets);

struct ParamBlock {
  std::size_t tuner = 0;
  std::size_t head = 0;
  std::size_t modulator = 0;
};

struct MetricsReport {
  GroupAccuracies accuracies;
  double micro_accuracy = 0.0;
  double la_loss = 0.0;
  std::optional<CosineDistance> head_distance;
  std::optional<CosineDistance> tail_distance;
  /// Empty for FixedAlpha runs.
  std::vector<std::pair<InsertionSite, double>> gamma;
  ParamBlock params;
};

/// Fills accuracies, micro accuracy, LA loss and group cosine distances
/// (when a group has at least two classes) from raw logits and features.
MetricsReport build_report(const ad::Tensor& logits, const ad::Tensor& features,
                           std::span<const std::size_t> labels, const data::ClassGroups& groups,
                           const LossConfig& loss);

}  // namespace mpft::objective
