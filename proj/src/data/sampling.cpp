#include <algorithm>
#include <cmath>

#include "mpft/data/longtail.hpp"
#include "mpft/errors.hpp"

namespace mpft::data {

namespace {

std::vector<std::vector<std::size_t>> members_by_class(std::span<const std::size_t> labels,
                                                       std::size_t num_classes) {
  std::vector<std::vector<std::size_t>> members(num_classes);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= num_classes) throw IndexError("label out of range in sampler");
    members[labels[i]].push_back(i);
  }
  for (std::size_t c = 0; c < num_classes; ++c) {
    if (members[c].empty()) throw SamplingError("class " + std::to_string(c) + " has no samples");
  }
  return members;
}

void check_ratio(double ratio) {
  if (!(ratio > 0.0 && ratio < 1.0)) throw SamplingError("sampling ratio must lie in (0, 1)");
}

// Partial Fisher-Yates: the first `take` entries become a uniform subset.
void take_without_replacement(std::vector<std::size_t> pool, std::size_t take, std::mt19937_64& rng,
                              std::vector<std::size_t>& out) {
  for (std::size_t i = 0; i < take; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, pool.size() - 1);
    std::swap(pool[i], pool[pick(rng)]);
    out.push_back(pool[i]);
  }
}

}  // namespace

std::vector<std::size_t> sample_outer_subset(std::span<const std::size_t> labels,
                                             std::size_t num_classes,
                                             const SamplingStrategy& strategy,
                                             std::mt19937_64& rng) {
  auto members = members_by_class(labels, num_classes);
  std::vector<std::size_t> out;

  if (const auto* s = std::get_if<RandomStratified>(&strategy)) {
    check_ratio(s->ratio);
    for (auto& pool : members) {
      // Guard against representation error pushing an exact product over
      // an integer (0.2 * 10 must give 2, not 3).
      const double want = s->ratio * static_cast<double>(pool.size());
      auto take = static_cast<std::size_t>(std::ceil(want - 1e-9));
      take = std::clamp<std::size_t>(take, 1, pool.size());
      take_without_replacement(std::move(pool), take, rng, out);
    }
    std::sort(out.begin(), out.end());
  } else if (const auto* s = std::get_if<ClassBalanced>(&strategy)) {
    if (s->per_class < 1) throw SamplingError("class_balanced needs k_per_class >= 1");
    for (auto& pool : members) {
      const std::size_t take = std::min(s->per_class, pool.size());
      take_without_replacement(std::move(pool), take, rng, out);
    }
    std::sort(out.begin(), out.end());
  } else if (const auto* s = std::get_if<TailHeavy>(&strategy)) {
    check_ratio(s->ratio);
    std::vector<double> weights;
    for (const auto& pool : members) weights.push_back(1.0 / static_cast<double>(pool.size()));
    std::discrete_distribution<std::size_t> pick_class(weights.begin(), weights.end());
    const auto total = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::llround(s->ratio * static_cast<double>(labels.size()))));
    out.reserve(total);
    for (std::size_t n = 0; n < total; ++n) {
      const auto& pool = members[pick_class(rng)];
      std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
      out.push_back(pool[pick(rng)]);
    }
  }
  return out;
}

std::vector<std::size_t> sample_outer_subset(const LongTailedDataset& data,
                                             const SamplingStrategy& strategy, std::uint64_t seed) {
  auto rng = make_rng(seed, 0);
  return sample_outer_subset(data.labels, data.num_classes(), strategy, rng);
}

}  // namespace mpft::data
