#pragma once

#include <cstdint>
#include <string>

#include <json.hpp>

#include "mpft/backbone/backbone.hpp"
#include "mpft/data/longtail.hpp"
#include "mpft/meta/meta.hpp"
#include "mpft/peft/peft.hpp"
#include "mpft/search/search.hpp"

namespace mpft::cli {

using ordered_json = nlohmann::ordered_json;

enum class Mode { Pretrain, Finetune, Meta, Grid, KnapsackVerify };

std::string_view mode_name(Mode mode);
Mode parse_mode(std::string_view name);

struct PeftSection {
  peft::PeftKind kind = peft::PeftKind::LoRA;
  std::size_t rank = 4;
  /// Empty means every (depth, position) pair of the backbone.
  std::vector<InsertionSite> sites;
  /// Scaling factor for fixed-scaling runs.
  double alpha = 0.1;
  peft::Activation activation = peft::Activation::Relu;

  std::vector<InsertionSite> resolved_sites(std::size_t num_blocks) const;
  peft::PeftPlan plan(std::size_t num_blocks, bool modulated) const;
};

/// A whole run. Dataset and backbone seeds, token count, input width and
/// class count are all derived from the top-level fields.
struct ExperimentConfig {
  data::DatasetSpec dataset;
  BackboneConfig backbone;
  PretrainOptions pretrain;
  PeftSection peft;
  meta::MetaSchedule schedule;
  search::GridSpec grid;
  Mode mode = Mode::Meta;
  std::string output_dir = "out";
  std::uint64_t seed = 7;

  /// Copies the shared seed and shapes into the module configs.
  void resolve();
  /// Throws ConfigError naming the offending field.
  void validate() const;
};

/// Strict parse: unknown keys and wrong types are ConfigErrors naming the
/// field path. Missing keys keep their defaults.
ExperimentConfig config_from_json(const nlohmann::json& j);
ordered_json config_to_json(const ExperimentConfig& cfg);
ExperimentConfig load_config(const std::string& path);

}  // namespace mpft::cli
