#include <cmath>

#include "mpft/errors.hpp"
#include "mpft/search/search.hpp"

namespace mpft::search {

namespace {

constexpr std::size_t kMaxSolve = 24;
constexpr std::size_t kMaxVerify = 16;

// Bit (n - 1 - i) holds item i, so ascending masks walk the indicator
// vectors in lexicographic order.
std::vector<bool> decode(std::uint32_t mask, std::size_t n) {
  std::vector<bool> x(n);
  for (std::size_t i = 0; i < n; ++i) x[i] = (mask >> (n - 1 - i)) & 1u;
  return x;
}

}  // namespace

void KnapsackInstance::validate() const {
  if (values.size() != weights.size()) {
    throw SpecError("knapsack has " + std::to_string(values.size()) + " values but " +
                    std::to_string(weights.size()) + " weights");
  }
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!(values[i] > 0.0) || !(weights[i] > 0.0)) {
      throw SpecError("knapsack item " + std::to_string(i) + " needs positive value and weight");
    }
  }
  if (!(capacity >= 0.0)) throw SpecError("knapsack capacity must be non-negative");
}

Selection solve_knapsack_bruteforce(const KnapsackInstance& inst) {
  inst.validate();
  const std::size_t n = inst.size();
  if (n > kMaxSolve) throw SizeError("brute force supports at most 24 items, got " + std::to_string(n));
  Selection best{0.0, std::vector<bool>(n, false)};
  const std::uint32_t end = std::uint32_t{1} << n;
  for (std::uint32_t mask = 0; mask < end; ++mask) {
    const auto x = decode(mask, n);
    double v = 0.0, w = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      if (!x[i]) continue;
      v += inst.values[i];
      w += inst.weights[i];
    }
    if (w <= inst.capacity && v > best.objective) best = {v, x};
  }
  return best;
}

double ModuleSelectionProblem::loss(const std::vector<bool>& chosen) const {
  double total = 0.0;
  for (std::size_t i = 0; i < chosen.size(); ++i) {
    if (chosen[i]) total += loss_terms[i];
  }
  return total;
}

bool ModuleSelectionProblem::feasible(const std::vector<bool>& chosen) const {
  double total = 0.0;
  for (std::size_t i = 0; i < chosen.size(); ++i) {
    if (chosen[i]) total += costs[i];
  }
  return total <= budget;
}

ModuleSelectionProblem reduce_knapsack(const KnapsackInstance& inst, Position position, double alpha) {
  inst.validate();
  ModuleSelectionProblem p;
  p.position = position;
  p.alpha = alpha;
  p.budget = inst.capacity;
  for (std::size_t i = 0; i < inst.size(); ++i) {
    p.candidates.push_back(InsertionSite{i + 1, position});
    p.loss_terms.push_back(-inst.values[i]);
    p.costs.push_back(inst.weights[i]);
  }
  return p;
}

Selection solve_selection_bruteforce(const ModuleSelectionProblem& problem) {
  const std::size_t n = problem.candidates.size();
  if (n > kMaxSolve) throw SizeError("brute force supports at most 24 sites, got " + std::to_string(n));
  Selection best{0.0, std::vector<bool>(n, false)};
  const std::uint32_t end = std::uint32_t{1} << n;
  for (std::uint32_t mask = 0; mask < end; ++mask) {
    const auto x = decode(mask, n);
    if (!problem.feasible(x)) continue;
    const double l = problem.loss(x);
    if (l < best.objective) best = {l, x};
  }
  return best;
}

bool verify_reduction(const KnapsackInstance& inst) {
  if (inst.size() > kMaxVerify) {
    throw SizeError("verification supports at most 16 items, got " + std::to_string(inst.size()));
  }
  const Selection knap = solve_knapsack_bruteforce(inst);
  const Selection sel = solve_selection_bruteforce(reduce_knapsack(inst));
  return knap.objective == -sel.objective && knap.chosen == sel.chosen;
}

KnapsackInstance random_knapsack(std::size_t n, std::mt19937_64& rng) {
  std::uniform_int_distribution<int> value(1, 100), weight(1, 50);
  KnapsackInstance inst;
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    inst.values.push_back(value(rng));
    inst.weights.push_back(weight(rng));
    total += inst.weights.back();
  }
  std::uniform_int_distribution<long> cap(0, static_cast<long>(total));
  inst.capacity = static_cast<double>(cap(rng));
  return inst;
}

}  // namespace mpft::search
