#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <numeric>
#include <thread>

#include "mpft/errors.hpp"
#include "mpft/meta/meta.hpp"
#include "mpft/search/search.hpp"

namespace mpft::search {

std::string_view depth_mode_name(DepthMode mode) {
  return mode == DepthMode::SingleBlock ? "single_block" : "last_n_blocks";
}

DepthMode parse_depth_mode(std::string_view name) {
  if (name == "single_block") return DepthMode::SingleBlock;
  if (name == "last_n_blocks") return DepthMode::LastNBlocks;
  throw ConfigError("unknown depth_mode '" + std::string(name) + "'");
}

void GridSpec::validate(std::size_t num_blocks) const {
  if (depths.empty()) throw ConfigError("grid.depths is empty");
  if (positions.empty()) throw ConfigError("grid.positions is empty");
  if (alphas.empty()) throw ConfigError("grid.alphas is empty");
  for (std::size_t d : depths) {
    if (d < 1 || d > num_blocks) {
      throw ConfigError("grid.depths entry " + std::to_string(d) + " outside 1.." +
                        std::to_string(num_blocks));
    }
  }
  for (std::size_t i = 0; i < alphas.size(); ++i) {
    if (!(alphas[i] > 0.0)) throw ConfigError("grid.alphas must be positive");
    if (i > 0 && !(alphas[i] > alphas[i - 1])) throw ConfigError("grid.alphas must be strictly increasing");
  }
  if (budget.batch_size < 1) throw ConfigError("grid.budget.batch_size must be >= 1");
  if (!(budget.lr > 0.0)) throw ConfigError("grid.budget.lr must be positive");
  if (rank < 1) throw ConfigError("grid.rank must be >= 1");
}

std::vector<double> default_alpha_grid() { return {0.001, 0.005, 0.01, 0.05, 0.1, 0.5, 1, 2, 4, 8}; }

std::vector<InsertionSite> config_sites(const GridConfig& config, DepthMode mode,
                                        std::size_t num_blocks) {
  if (config.depth < 1 || config.depth > num_blocks) {
    throw SiteError("grid depth " + std::to_string(config.depth) + " outside 1.." +
                    std::to_string(num_blocks));
  }
  if (mode == DepthMode::SingleBlock) return {InsertionSite{config.depth, config.position}};
  std::vector<InsertionSite> sites;
  for (std::size_t d = num_blocks - config.depth + 1; d <= num_blocks; ++d) {
    sites.push_back(InsertionSite{d, config.position});
  }
  return sites;
}

std::vector<GridConfig> enumerate_configs(const GridSpec& spec) {
  std::vector<GridConfig> out;
  out.reserve(spec.depths.size() * spec.positions.size() * spec.alphas.size());
  for (std::size_t d : spec.depths) {
    for (Position p : spec.positions) {
      for (double a : spec.alphas) out.push_back(GridConfig{d, p, a});
    }
  }
  return out;
}

ConfigResult evaluate_config(const SearchTask& task, const GridConfig& config, const GridSpec& spec,
                             std::uint64_t seed) {
  const auto started = std::chrono::steady_clock::now();
  ConfigResult result;
  result.config = config;
  try {
    if (!task.backbone || !task.train || !task.eval) throw ContractError("search task is incomplete");
    peft::PeftPlan plan;
    plan.kind = spec.kind;
    plan.rank = spec.rank;
    plan.scaling = peft::FixedAlpha{config.alpha};
    plan.sites = config_sites(config, spec.depth_mode, task.backbone->config.num_blocks);
    auto model = peft::attach(task.backbone, task.head, plan, seed);

    const data::LongTailedDataset& train = *task.train;
    const objective::LossConfig loss{spec.budget.tau, data::class_priors(train.class_counts)};
    meta::Sgd sgd(spec.budget.lr);
    auto rng = data::make_rng(seed, 1);
    std::vector<std::size_t> order(train.size());
    std::size_t cursor = order.size();
    for (std::size_t step = 1; step <= spec.budget.steps; ++step) {
      if (cursor >= order.size()) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::shuffle(order.begin(), order.end(), rng);
        cursor = 0;
      }
      const std::size_t take = std::min(spec.budget.batch_size, order.size() - cursor);
      const auto batch = data::gather(train, std::span<const std::size_t>(order.data() + cursor, take));
      cursor += take;
      result.final_train_loss = meta::inner_step(model, sgd, batch, loss, step);
    }

    const auto report = meta::evaluate_model(model, *task.eval, task.groups, loss);
    result.accuracy = report.micro_accuracy;
    result.groups = report.accuracies;
    result.val_loss = report.la_loss;
  } catch (const std::exception& e) {
    result.failed = true;
    result.accuracy = 0.0;
    result.note = e.what();
  }
  result.seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return result;
}

namespace {

std::size_t position_rank(Position p) {
  return static_cast<std::size_t>(std::find(kAllPositions.begin(), kAllPositions.end(), p) -
                                  kAllPositions.begin());
}

// True if a should be preferred over b.
bool better(const ConfigResult& a, const ConfigResult& b) {
  if (a.failed != b.failed) return !a.failed;
  if (a.accuracy != b.accuracy) return a.accuracy > b.accuracy;
  if (a.config.alpha != b.config.alpha) return a.config.alpha < b.config.alpha;
  if (a.config.depth != b.config.depth) return a.config.depth < b.config.depth;
  return position_rank(a.config.position) < position_rank(b.config.position);
}

}  // namespace

const ConfigResult& select_best(std::span<const ConfigResult> table) {
  if (table.empty()) throw SearchError("no grid results to choose from");
  const ConfigResult* best = &table.front();
  for (const ConfigResult& r : table) {
    if (better(r, *best)) best = &r;
  }
  return *best;
}

std::size_t worker_count() {
  if (const char* env = std::getenv("MPFT_THREADS")) {
    char* end = nullptr;
    const long n = std::strtol(env, &end, 10);
    if (end != env && *end == '\0' && n >= 1) return static_cast<std::size_t>(n);
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

GridResult grid_search(const SearchTask& task, const GridSpec& spec, std::uint64_t seed,
                       std::size_t workers) {
  if (!task.backbone) throw ContractError("search task has no backbone");
  spec.validate(task.backbone->config.num_blocks);
  const auto configs = enumerate_configs(spec);
  GridResult out;
  out.table.resize(configs.size());

  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (std::size_t i = next++; i < configs.size(); i = next++) {
      out.table[i] = evaluate_config(task, configs[i], spec, seed);
      out.table[i].index = i;
    }
  };
  if (workers == 0) workers = worker_count();
  workers = std::min(workers, configs.size());
  if (workers <= 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work);
    for (auto& t : pool) t.join();
  }

  if (std::all_of(out.table.begin(), out.table.end(), [](const ConfigResult& r) { return r.failed; })) {
    throw SearchError("all " + std::to_string(configs.size()) + " grid configs failed; first: " +
                      out.table.front().note);
  }
  out.best = select_best(out.table);
  return out;
}

std::string heatmap_csv(std::span<const ConfigResult> table) {
  auto num = [](double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6g", v);
    return std::string(buf);
  };
  auto opt = [&](const std::optional<double>& v) { return v ? num(*v) : std::string(); };
  std::string csv = "depth,position,alpha,acc_head,acc_med,acc_tail,acc_overall\n";
  for (const ConfigResult& r : table) {
    csv += std::to_string(r.config.depth) + ',' + std::string(position_name(r.config.position)) + ',' +
           num(r.config.alpha) + ',' + opt(r.groups.head) + ',' + opt(r.groups.medium) + ',' +
           opt(r.groups.tail) + ',' + num(r.groups.overall) + '\n';
  }
  return csv;
}

}  // namespace mpft::search
