#pragma once

#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "mpft/meta/meta.hpp"
#include "mpft/objective/objective.hpp"
#include "mpft/search/search.hpp"

namespace mpft::cli {

/// Accuracy, loss, distance, gamma and parameter blocks of the metrics JSON.
/// Accuracies are fractions in [0, 1]; absent groups are null.
nlohmann::ordered_json metrics_json(const objective::MetricsReport& report);

nlohmann::ordered_json run_json(const meta::RunResult& run);
nlohmann::ordered_json config_result_json(const search::ConfigResult& result);

/// `site_depth,site_position,gamma`.
std::string gamma_csv(std::span<const std::pair<InsertionSite, double>> table);
/// `outer_step_index,depth,position,gamma`.
std::string trajectory_csv(std::span<const meta::GammaRecord> trajectory);

/// Two-space indented JSON with a trailing newline.
std::string canonical(const nlohmann::ordered_json& j);

/// Human-readable summary of a metrics JSON file, with percentages.
std::string summary_text(const nlohmann::ordered_json& metrics);

void write_text(const std::string& path, const std::string& text);

}  // namespace mpft::cli
