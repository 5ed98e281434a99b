#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "mpft/backbone/backbone.hpp"
#include "mpft/data/longtail.hpp"
#include "mpft/objective/objective.hpp"
#include "mpft/peft/peft.hpp"

namespace mpft::search {

enum class DepthMode { SingleBlock, LastNBlocks };

std::string_view depth_mode_name(DepthMode mode);
DepthMode parse_depth_mode(std::string_view name);

struct Budget {
  std::size_t steps = 100;
  double lr = 1e-2;
  std::size_t batch_size = 32;
  double tau = 1.0;
};

struct GridSpec {
  std::vector<std::size_t> depths;
  std::vector<Position> positions;
  /// Strictly increasing, positive.
  std::vector<double> alphas;
  Budget budget;
  DepthMode depth_mode = DepthMode::SingleBlock;
  peft::PeftKind kind = peft::PeftKind::LoRA;
  std::size_t rank = 4;

  /// Throws ConfigError; depths must lie in [1, num_blocks].
  void validate(std::size_t num_blocks) const;
};

/// The default scaling grid: ten points from 1e-3 to 8.
std::vector<double> default_alpha_grid();

struct GridConfig {
  std::size_t depth = 1;
  Position position = Position::Q;
  double alpha = 0.1;
};

/// single_block: the one block `depth`; last_n_blocks: blocks L-depth+1..L.
std::vector<InsertionSite> config_sites(const GridConfig& config, DepthMode mode,
                                        std::size_t num_blocks);

struct ConfigResult {
  std::size_t index = 0;
  GridConfig config;
  double accuracy = 0.0;
  objective::GroupAccuracies groups;
  double val_loss = 0.0;
  double final_train_loss = 0.0;
  /// Not part of any serialized output.
  double seconds = 0.0;
  bool failed = false;
  std::string note;
};

/// Cartesian product in (depth, position, alpha) order.
std::vector<GridConfig> enumerate_configs(const GridSpec& spec);

struct SearchTask {
  std::shared_ptr<const BackboneWeights> backbone;
  ClassifierHead head;
  const data::LongTailedDataset* train = nullptr;
  const data::LongTailedDataset* eval = nullptr;
  data::ClassGroups groups;
};

/// Fresh FixedAlpha attachment trained for the step budget on the LA loss,
/// then scored on the evaluation split. Errors become a failed entry.
ConfigResult evaluate_config(const SearchTask& task, const GridConfig& config, const GridSpec& spec,
                             std::uint64_t seed);

/// Highest accuracy; ties go to smaller alpha, then shallower depth, then
/// earlier position.
const ConfigResult& select_best(std::span<const ConfigResult> table);

struct GridResult {
  ConfigResult best;
  std::vector<ConfigResult> table;
};

/// Worker count from MPFT_THREADS, else the hardware concurrency.
std::size_t worker_count();

/// Evaluates every config (in parallel when workers > 1) and merges by
/// config index. Throws SearchError if every config failed.
GridResult grid_search(const SearchTask& task, const GridSpec& spec, std::uint64_t seed,
                       std::size_t workers = 0);

/// `depth,position,alpha,acc_head,acc_med,acc_tail,acc_overall`, six
/// significant digits, empty cells for absent groups.
std::string heatmap_csv(std::span<const ConfigResult> table);

struct KnapsackInstance {
  std::vector<double> values;
  std::vector<double> weights;
  double capacity = 0.0;

  std::size_t size() const { return values.size(); }
  /// Throws SpecError for mismatched lengths or non-positive entries.
  void validate() const;
};

struct Selection {
  double objective = 0.0;
  std::vector<bool> chosen;
};

/// Exhaustive search; among optimal subsets the lexicographically smallest
/// indicator vector wins. Throws SizeError above 24 items.
Selection solve_knapsack_bruteforce(const KnapsackInstance& inst);

/// One candidate depth per item at a fixed position and scaling factor.
/// Selecting site i costs weights[i] and changes the loss by -values[i].
struct ModuleSelectionProblem {
  Position position = Position::Q;
  double alpha = 1.0;
  std::vector<InsertionSite> candidates;
  std::vector<double> loss_terms;
  std::vector<double> costs;
  double budget = 0.0;

  double loss(const std::vector<bool>& chosen) const;
  bool feasible(const std::vector<bool>& chosen) const;
};

ModuleSelectionProblem reduce_knapsack(const KnapsackInstance& inst, Position position = Position::Q,
                                       double alpha = 1.0);

/// Minimum loss over feasible selections, same tie rule as the knapsack
/// solver. Throws SizeError above 24 candidates.
Selection solve_selection_bruteforce(const ModuleSelectionProblem& problem);

/// Both brute-force optima agree (knapsack value == -selection loss) and
/// pick the same items. Throws SizeError above 16 items.
bool verify_reduction(const KnapsackInstance& inst);

/// Integer-valued random instance with n items.
KnapsackInstance random_knapsack(std::size_t n, std::mt19937_64& rng);

}  // namespace mpft::search
