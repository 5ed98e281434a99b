#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <utility>
#include <variant>
#include <vector>

#include "mpft/autodiff/tensor.hpp"

namespace mpft::data {

struct NoShift {};
/// Rotates every consecutive channel pair (0,1), (2,3), ... of the class
/// prototypes by `angle` radians.
struct RotationShift {
  double angle = 0.0;
};
/// Zeroes a seeded random subset of round(fraction * feature_dim) prototype
/// channels.
struct ChannelDropShift {
  double fraction = 0.0;
};
using DomainShift = std::variant<NoShift, RotationShift, ChannelDropShift>;

struct DatasetSpec {
  std::size_t num_classes = 10;
  std::size_t n_max = 100;
  double imbalance_ratio = 100.0;
  std::size_t feature_dim = 8;
  std::size_t tokens_per_sample = 4;
  DomainShift shift = NoShift{};
  /// Per-coordinate Gaussian noise around the class prototype.
  double noise = 1.0;
  /// Norm scale of the per-token class prototypes.
  double prototype_scale = 1.0;
  /// Samples per class in the balanced source task (0 means n_max).
  std::size_t source_per_class = 0;
  /// Samples per class in the balanced target evaluation split.
  std::size_t eval_per_class = 20;
  std::uint64_t seed = 0;

  /// n_c = round(n_max * ratio^(-c / (C - 1))). Throws SpecError when any
  /// count rounds to zero or any other field is invalid.
  std::vector<std::size_t> class_counts() const;
  void validate() const;
};

struct LongTailedDataset {
  ad::Tensor features;  // [N x T x feature_dim]
  std::vector<std::size_t> labels;
  std::vector<std::size_t> class_counts;

  std::size_t size() const { return labels.size(); }
  std::size_t num_classes() const { return class_counts.size(); }
  /// Checks labels against class_counts and feature rows.
  void validate() const;
};

struct Batch {
  ad::Tensor x;
  std::vector<std::size_t> labels;
};

Batch gather(const LongTailedDataset& data, std::span<const std::size_t> indices);
Batch whole(const LongTailedDataset& data);

/// Balanced source task and long-tailed target task. Prototypes are shared;
/// the target applies the configured shift. Deterministic in spec.seed.
std::pair<LongTailedDataset, LongTailedDataset> generate(const DatasetSpec& spec);

/// Balanced held-out split drawn from the target distribution, independent
/// of the training draws.
LongTailedDataset generate_eval(const DatasetSpec& spec);

struct ClassGroups {
  std::vector<std::size_t> head, medium, tail;
  double head_frac = 0.05;
  double tail_frac = 0.01;

  enum class Group { Head, Medium, Tail };
  Group group_of(std::size_t cls) const;
};

/// Head if n_c / N > head_frac, tail if n_c / N < tail_frac, else medium.
ClassGroups partition_groups(std::span<const std::size_t> counts, double head_frac = 0.05,
                             double tail_frac = 0.01);

/// pi_c = n_c / N.
std::vector<double> class_priors(std::span<const std::size_t> counts);

struct RandomStratified {
  double ratio = 0.2;
};
struct ClassBalanced {
  std::size_t per_class = 5;
};
struct TailHeavy {
  double ratio = 0.2;
};
using SamplingStrategy = std::variant<RandomStratified, ClassBalanced, TailHeavy>;

/// Draws the outer-loop validation subset. Each call advances `rng`, so
/// consecutive calls produce fresh subsets.
///
/// random_stratified takes ceil(ratio * n_c) (at least one) per class
/// without replacement; class_balanced takes min(k, n_c) per class;
/// tail_heavy draws round(ratio * N) samples with replacement, picking the
/// class with probability proportional to 1 / n_c and then a uniform member.
/// Stratified and balanced results are sorted ascending.
std::vector<std::size_t> sample_outer_subset(std::span<const std::size_t> labels,
                                             std::size_t num_classes,
                                             const SamplingStrategy& strategy,
                                             std::mt19937_64& rng);

std::vector<std::size_t> sample_outer_subset(const LongTailedDataset& data,
                                             const SamplingStrategy& strategy, std::uint64_t seed);

/// Deterministic RNG derived from (seed, stream), so independent consumers of
/// one seed never share a sequence.
std::mt19937_64 make_rng(std::uint64_t seed, std::uint64_t stream);

}  // namespace mpft::data
