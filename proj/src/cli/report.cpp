#include "mpft/cli/report.hpp"

#include <cstdio>
#include <fstream>

#include "mpft/errors.hpp"

namespace mpft::cli {

using nlohmann::ordered_json;

namespace {

ordered_json optional_value(const std::optional<double>& v) {
  return v ? ordered_json(*v) : ordered_json(nullptr);
}

ordered_json distance_json(const std::optional<objective::CosineDistance>& d) {
  if (!d) return nullptr;
  return {{"mean", d->mean}, {"pairs", d->pairs}, {"skipped", d->skipped}};
}

ordered_json accuracy_json(const objective::GroupAccuracies& acc) {
  return {{"head", optional_value(acc.head)},
          {"medium", optional_value(acc.medium)},
          {"tail", optional_value(acc.tail)},
          {"overall", acc.overall}};
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string percent(const ordered_json& v) {
  if (v.is_null()) return "n/a";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f%%", 100.0 * v.get<double>());
  return buf;
}

}  // namespace

ordered_json metrics_json(const objective::MetricsReport& report) {
  ordered_json j;
  j["accuracy"] = accuracy_json(report.accuracies);
  j["accuracy"]["micro"] = report.micro_accuracy;
  ordered_json per_class = ordered_json::array();
  for (const auto& c : report.accuracies.per_class) per_class.push_back(optional_value(c));
  j["per_class_accuracy"] = per_class;
  j["la_loss"] = report.la_loss;
  j["inter_class_distance"] = {{"convention", "1 - cosine"},
                               {"head", distance_json(report.head_distance)},
                               {"tail", distance_json(report.tail_distance)}};
  if (report.gamma.empty()) {
    j["gamma"] = {{"present", false}, {"note", "fixed scaling run; no modulator"}};
  } else {
    ordered_json sites = ordered_json::array();
    for (const auto& [site, g] : report.gamma) {
      sites.push_back({{"depth", site.depth}, {"position", position_name(site.position)}, {"gamma", g}});
    }
    j["gamma"] = {{"present", true}, {"sites", sites}};
  }
  j["params"] = {{"tuner", report.params.tuner},
                 {"head", report.params.head},
                 {"modulator", report.params.modulator},
                 {"total", report.params.tuner + report.params.head + report.params.modulator}};
  return j;
}

ordered_json run_json(const meta::RunResult& run) {
  const auto& st = run.state;
  return {{"epochs_run", st.epoch},
          {"inner_steps", st.inner_steps},
          {"outer_steps", st.outer_steps},
          {"early_stopped", st.early_stopped},
          {"val_accuracy_history", st.val_history},
          {"final_train_loss", run.train_losses.empty() ? 0.0 : run.train_losses.back()}};
}

ordered_json config_result_json(const search::ConfigResult& r) {
  ordered_json j = {{"index", r.index},
                    {"depth", r.config.depth},
                    {"position", position_name(r.config.position)},
                    {"alpha", r.config.alpha},
                    {"accuracy", r.accuracy},
                    {"groups", accuracy_json(r.groups)},
                    {"val_la_loss", r.val_loss},
                    {"final_train_loss", r.final_train_loss},
                    {"failed", r.failed}};
  if (r.failed) j["note"] = r.note;
  return j;
}

std::string gamma_csv(std::span<const std::pair<InsertionSite, double>> table) {
  std::string csv = "site_depth,site_position,gamma\n";
  for (const auto& [site, g] : table) {
    csv += std::to_string(site.depth) + ',' + std::string(position_name(site.position)) + ',' + fmt(g) + '\n';
  }
  return csv;
}

std::string trajectory_csv(std::span<const meta::GammaRecord> trajectory) {
  std::string csv = "outer_step_index,depth,position,gamma\n";
  for (const auto& r : trajectory) {
    csv += std::to_string(r.outer_index) + ',' + std::to_string(r.site.depth) + ',' +
           std::string(position_name(r.site.position)) + ',' + fmt(r.gamma) + '\n';
  }
  return csv;
}

std::string canonical(const ordered_json& j) { return j.dump(2) + "\n"; }

std::string summary_text(const ordered_json& metrics) {
  std::string out;
  if (metrics.contains("mode")) out += "mode: " + metrics["mode"].get<std::string>() + "\n";
  const ordered_json* m = &metrics;
  if (metrics.contains("metrics")) m = &metrics["metrics"];
  if (m->contains("accuracy")) {
    const auto& a = (*m)["accuracy"];
    out += "head " + percent(a["head"]) + "  medium " + percent(a["medium"]) + "  tail " +
           percent(a["tail"]) + "  overall " + percent(a["overall"]) + "\n";
  }
  if (m->contains("la_loss")) out += "LA loss " + fmt((*m)["la_loss"].get<double>()) + "\n";
  if (m->contains("gamma") && (*m)["gamma"].value("present", false)) {
    for (const auto& s : (*m)["gamma"]["sites"]) {
      char buf[96];
      std::snprintf(buf, sizeof buf, "gamma %zu:%s = %.4f\n", s["depth"].get<std::size_t>(),
                    s["position"].get<std::string>().c_str(), s["gamma"].get<double>());
      out += buf;
    }
  }
  if (m->contains("params")) {
    const auto& p = (*m)["params"];
    out += "params: tuner " + std::to_string(p["tuner"].get<std::size_t>()) + ", head " +
           std::to_string(p["head"].get<std::size_t>()) + ", modulator " +
           std::to_string(p["modulator"].get<std::size_t>()) + "\n";
  }
  if (metrics.contains("best")) {
    const auto& b = metrics["best"];
    out += "best config: depth " + std::to_string(b["depth"].get<std::size_t>()) + ", " +
           b["position"].get<std::string>() + ", alpha " + fmt(b["alpha"].get<double>()) +
           ", accuracy " + percent(b["accuracy"]) + "\n";
  }
  if (metrics.contains("verified")) {
    out += std::to_string(metrics["verified"].get<std::size_t>()) + "/" +
           std::to_string(metrics["trials"].get<std::size_t>()) + " verified\n";
  }
  return out;
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write '" + path + "'");
  out << text;
  if (!out) throw Error("failed writing '" + path + "'");
}

}  // namespace mpft::cli
