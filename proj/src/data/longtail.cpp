#include "mpft/data/longtail.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "mpft/errors.hpp"

namespace mpft::data {

namespace {

enum Stream : std::uint64_t {
  kPrototypes = 0,
  kChannelMask = 1,
  kSource = 2,
  kTarget = 3,
  kEval = 4,
};

using Prototypes = std::vector<std::vector<double>>;  // [class][token * dim]

Prototypes make_prototypes(const DatasetSpec& spec) {
  auto rng = make_rng(spec.seed, kPrototypes);
  std::normal_distribution<double> normal(0.0, 1.0);
  const std::size_t width = spec.tokens_per_sample * spec.feature_dim;
  Prototypes protos(spec.num_classes, std::vector<double>(width));
  for (auto& proto : protos) {
    for (double& v : proto) v = spec.prototype_scale * normal(rng);
  }
  return protos;
}

Prototypes shift_prototypes(const DatasetSpec& spec, Prototypes protos) {
  const std::size_t dim = spec.feature_dim;
  if (const auto* rot = std::get_if<RotationShift>(&spec.shift)) {
    const double c = std::cos(rot->angle), s = std::sin(rot->angle);
    for (auto& proto : protos) {
      for (std::size_t t = 0; t < spec.tokens_per_sample; ++t) {
        double* row = proto.data() + t * dim;
        for (std::size_t j = 0; j + 1 < dim; j += 2) {
          const double a = row[j], b = row[j + 1];
          row[j] = c * a - s * b;
          row[j + 1] = s * a + c * b;
        }
      }
    }
  } else if (const auto* drop = std::get_if<ChannelDropShift>(&spec.shift)) {
    auto rng = make_rng(spec.seed, kChannelMask);
    std::vector<std::size_t> channels(dim);
    std::iota(channels.begin(), channels.end(), 0);
    std::shuffle(channels.begin(), channels.end(), rng);
    const auto dropped = static_cast<std::size_t>(std::llround(drop->fraction * static_cast<double>(dim)));
    for (auto& proto : protos) {
      for (std::size_t t = 0; t < spec.tokens_per_sample; ++t) {
        for (std::size_t k = 0; k < dropped; ++k) proto[t * dim + channels[k]] = 0.0;
      }
    }
  }
  return protos;
}

LongTailedDataset sample(const DatasetSpec& spec, const Prototypes& protos,
                         std::span<const std::size_t> counts, std::mt19937_64 rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  const std::size_t width = spec.tokens_per_sample * spec.feature_dim;
  const std::size_t total = std::accumulate(counts.begin(), counts.end(), std::size_t{0});
  std::vector<double> values;
  values.reserve(total * width);
  LongTailedDataset out;
  out.class_counts.assign(counts.begin(), counts.end());
  out.labels.reserve(total);
  for (std::size_t c = 0; c < counts.size(); ++c) {
    for (std::size_t n = 0; n < counts[c]; ++n) {
      for (std::size_t k = 0; k < width; ++k) values.push_back(protos[c][k] + spec.noise * normal(rng));
      out.labels.push_back(c);
    }
  }
  out.features =
      ad::Tensor({total, spec.tokens_per_sample, spec.feature_dim}, std::move(values));
  return out;
}

}  // namespace

std::mt19937_64 make_rng(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)};
  return std::mt19937_64(seq);
}

void DatasetSpec::validate() const {
  if (num_classes < 2) throw SpecError("dataset needs at least 2 classes");
  if (n_max < 1) throw SpecError("n_max must be at least 1");
  if (!(imbalance_ratio >= 1.0)) throw SpecError("imbalance_ratio must be >= 1");
  if (feature_dim < 1 || tokens_per_sample < 1) throw SpecError("feature_dim and tokens must be positive");
  if (!(noise >= 0.0)) throw SpecError("noise must be non-negative");
  if (eval_per_class < 1) throw SpecError("eval_per_class must be at least 1");
  if (const auto* drop = std::get_if<ChannelDropShift>(&shift)) {
    if (!(drop->fraction >= 0.0 && drop->fraction <= 1.0)) {
      throw SpecError("channel_drop fraction must lie in [0, 1]");
    }
  }
  (void)class_counts();
}

std::vector<std::size_t> DatasetSpec::class_counts() const {
  if (num_classes < 2) throw SpecError("dataset needs at least 2 classes");
  std::vector<std::size_t> counts(num_classes);
  const double last = static_cast<double>(num_classes - 1);
  for (std::size_t c = 0; c < num_classes; ++c) {
    const double n = static_cast<double>(n_max) * std::pow(imbalance_ratio, -static_cast<double>(c) / last);
    const long long rounded = std::llround(n);
    if (rounded < 1) {
      throw SpecError("class " + std::to_string(c) + " count rounds to 0 (n_max=" +
                      std::to_string(n_max) + ", ratio=" + std::to_string(imbalance_ratio) + ")");
    }
    counts[c] = static_cast<std::size_t>(rounded);
  }
  return counts;
}

void LongTailedDataset::validate() const {
  if (features.rank() != 3 || features.dim(0) != labels.size()) {
    throw SpecError("dataset features " + ad::shape_str(features.shape()) + " do not match " +
                    std::to_string(labels.size()) + " labels");
  }
  std::vector<std::size_t> seen(class_counts.size(), 0);
  for (std::size_t y : labels) {
    if (y >= class_counts.size()) throw SpecError("label " + std::to_string(y) + " out of range");
    ++seen[y];
  }
  if (seen != class_counts) throw SpecError("labels disagree with class_counts");
}

Batch gather(const LongTailedDataset& data, std::span<const std::size_t> indices) {
  const std::size_t tokens = data.features.dim(1), dim = data.features.dim(2);
  const std::size_t width = tokens * dim;
  if (indices.empty()) throw SamplingError("cannot gather an empty batch");
  std::vector<double> values;
  values.reserve(indices.size() * width);
  Batch batch;
  batch.labels.reserve(indices.size());
  const auto src = data.features.data();
  for (std::size_t i : indices) {
    if (i >= data.size()) throw IndexError("sample index " + std::to_string(i) + " out of range");
    values.insert(values.end(), src.begin() + static_cast<std::ptrdiff_t>(i * width),
                  src.begin() + static_cast<std::ptrdiff_t>((i + 1) * width));
    batch.labels.push_back(data.labels[i]);
  }
  batch.x = ad::Tensor({indices.size(), tokens, dim}, std::move(values));
  return batch;
}

Batch whole(const LongTailedDataset& data) { return Batch{data.features, data.labels}; }

std::pair<LongTailedDataset, LongTailedDataset> generate(const DatasetSpec& spec) {
  spec.validate();
  const Prototypes source_protos = make_prototypes(spec);
  const Prototypes target_protos = shift_prototypes(spec, source_protos);
  const std::size_t per_class = spec.source_per_class == 0 ? spec.n_max : spec.source_per_class;
  const std::vector<std::size_t> balanced(spec.num_classes, per_class);
  const std::vector<std::size_t> counts = spec.class_counts();
  return {sample(spec, source_protos, balanced, make_rng(spec.seed, kSource)),
          sample(spec, target_protos, counts, make_rng(spec.seed, kTarget))};
}

LongTailedDataset generate_eval(const DatasetSpec& spec) {
  spec.validate();
  const Prototypes target_protos = shift_prototypes(spec, make_prototypes(spec));
  const std::vector<std::size_t> balanced(spec.num_classes, spec.eval_per_class);
  return sample(spec, target_protos, balanced, make_rng(spec.seed, kEval));
}

ClassGroups::Group ClassGroups::group_of(std::size_t cls) const {
  if (std::find(head.begin(), head.end(), cls) != head.end()) return Group::Head;
  if (std::find(tail.begin(), tail.end(), cls) != tail.end()) return Group::Tail;
  if (std::find(medium.begin(), medium.end(), cls) != medium.end()) return Group::Medium;
  throw IndexError("class " + std::to_string(cls) + " belongs to no group");
}

ClassGroups partition_groups(std::span<const std::size_t> counts, double head_frac, double tail_frac) {
  if (counts.empty()) throw ContractError("partition_groups needs at least one class");
  if (!(head_frac > tail_frac)) throw ConfigError("head_frac must exceed tail_frac");
  const double total = static_cast<double>(std::accumulate(counts.begin(), counts.end(), std::size_t{0}));
  ClassGroups groups;
  groups.head_frac = head_frac;
  groups.tail_frac = tail_frac;
  for (std::size_t c = 0; c < counts.size(); ++c) {
    const double share = static_cast<double>(counts[c]) / total;
    if (share > head_frac) {
      groups.head.push_back(c);
    } else if (share < tail_frac) {
      groups.tail.push_back(c);
    } else {
      groups.medium.push_back(c);
    }
  }
  return groups;
}

std::vector<double> class_priors(std::span<const std::size_t> counts) {
  if (counts.empty()) throw ContractError("class_priors needs at least one class");
  const double total = static_cast<double>(std::accumulate(counts.begin(), counts.end(), std::size_t{0}));
  std::vector<double> priors;
  priors.reserve(counts.size());
  for (std::size_t n : counts) {
    if (n == 0) throw ContractError("class_priors needs positive counts");
    priors.push_back(static_cast<double>(n) / total);
  }
  return priors;
}

}  // namespace mpft::data
