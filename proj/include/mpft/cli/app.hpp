#pragma once

#include <memory>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "mpft/cli/config.hpp"

namespace mpft::cli {

/// Data, frozen backbone and class-mean head shared by every training mode.
struct Prepared {
  data::LongTailedDataset source, target, eval;
  data::ClassGroups groups;
  std::shared_ptr<BackboneWeights> backbone;
  ClassifierHead head;
  std::optional<PretrainResult> pretrain;
  objective::LossConfig loss;
};

/// Generates the data, then pretrains on the source task (or loads the
/// backbone checkpoint when given), freezes it and initializes the head
/// from target class-mean features. `pretrain = false` keeps random weights.
Prepared prepare(const ExperimentConfig& cfg, const std::string& backbone_path = "",
                 bool pretrain = true);

struct TrainOutcome {
  std::unique_ptr<peft::InstrumentedModel> model;
  meta::RunResult run;
  objective::MetricsReport report;
  double initial_val_loss = 0.0;
};

/// Bi-level run over the configured sites in Modulated mode.
TrainOutcome run_meta(const ExperimentConfig& cfg, const Prepared& prep);
/// Fixed-scaling run over the same sites with the given schedule.
TrainOutcome run_fixed(const ExperimentConfig& cfg, const Prepared& prep, double alpha,
                       const meta::MetaSchedule& schedule);

search::GridResult run_grid(const ExperimentConfig& cfg, const Prepared& prep, std::size_t workers = 0);

/// Runs one subcommand. `args` excludes the program name. Exit codes: 0 ok,
/// 1 other failure, 2 usage, 3 configuration, 4 training.
int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

std::string usage();

}  // namespace mpft::cli
