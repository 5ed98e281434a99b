#include "mpft/cli/app.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "mpft/cli/checkpoint.hpp"
#include "mpft/cli/report.hpp"
#include "mpft/errors.hpp"

namespace mpft::cli {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

const std::vector<std::string> kCommands = {"gen-data",    "pretrain",        "finetune",
                                            "meta-finetune", "grid-search",   "knapsack-verify",
                                            "report",      "feature-dump"};

Checkpoint backbone_checkpoint(const ExperimentConfig& cfg, const BackboneWeights& w) {
  Checkpoint ckpt;
  ckpt.config = config_to_json(cfg);
  for (const auto& [name, t] : w.named_tensors()) ckpt.arrays.push_back({name, t->shape(), t->values()});
  return ckpt;
}

void load_backbone(BackboneWeights& w, const std::string& path) {
  const Checkpoint ckpt = load_checkpoint(path);
  for (auto& [name, t] : w.named_tensors()) {
    const NamedArray& a = ckpt.find(name);
    if (a.shape != t->shape()) {
      throw ConfigError("backbone: checkpoint array '" + name + "' has shape " + ad::shape_str(a.shape) +
                        ", config expects " + ad::shape_str(t->shape()));
    }
    std::copy(a.data.begin(), a.data.end(), t->mutable_data().begin());
  }
}

Checkpoint model_checkpoint(const ExperimentConfig& cfg, peft::InstrumentedModel& model) {
  Checkpoint ckpt;
  ckpt.config = config_to_json(cfg);
  auto add = [&](const std::vector<std::pair<std::string, ad::Tensor*>>& params) {
    for (const auto& [name, t] : params) ckpt.arrays.push_back({name, t->shape(), t->values()});
  };
  add(model.peft_parameters());
  add(model.head_parameters());
  add(model.modulator_parameters());
  return ckpt;
}

TrainOutcome train(const ExperimentConfig& cfg, const Prepared& prep, const peft::PeftPlan& plan,
                   const meta::MetaSchedule& schedule, bool bilevel) {
  TrainOutcome out;
  out.model = std::make_unique<peft::InstrumentedModel>(
      peft::attach(prep.backbone, prep.head, plan, cfg.seed));
  out.initial_val_loss =
      meta::evaluate_model(*out.model, prep.eval, prep.groups, prep.loss).la_loss;
  out.run = bilevel ? meta::run_bilevel(*out.model, prep.target, schedule, cfg.seed)
                    : meta::run_finetune(*out.model, prep.target, schedule, cfg.seed);
  out.report = meta::evaluate_model(*out.model, prep.eval, prep.groups, prep.loss);
  return out;
}

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string backbone;
  std::string metrics;
  std::string stage = "pretrained";
  std::size_t n = 10;
  std::size_t trials = 100;
};

ExperimentConfig resolve_config(const Options& o, Mode mode) {
  if (o.config.empty()) throw ConfigError("--config: missing required config path");
  ExperimentConfig cfg = load_config(o.config);
  cfg.mode = mode;
  if (o.seed) cfg.seed = *o.seed;
  if (!o.out.empty()) cfg.output_dir = o.out;
  cfg.resolve();
  cfg.validate();
  fs::create_directories(cfg.output_dir);
  write_text((fs::path(cfg.output_dir) / "config.json").string(), canonical(config_to_json(cfg)));
  return cfg;
}

std::string path_in(const ExperimentConfig& cfg, const char* name) {
  return (fs::path(cfg.output_dir) / name).string();
}

ordered_json header(const ExperimentConfig& cfg) {
  return {{"mode", mode_name(cfg.mode)}, {"seed", cfg.seed}};
}

int cmd_gen_data(const Options& o, std::ostream& out) {
  const ExperimentConfig cfg = resolve_config(o, Mode::Pretrain);
  auto [source, target] = data::generate(cfg.dataset);
  const auto eval = data::generate_eval(cfg.dataset);
  const auto groups = data::partition_groups(target.class_counts);
  ordered_json j = header(cfg);
  j["mode"] = "gen-data";
  j["source_size"] = source.size();
  j["target_size"] = target.size();
  j["eval_size"] = eval.size();
  j["class_counts"] = target.class_counts;
  j["priors"] = data::class_priors(target.class_counts);
  j["groups"] = {{"head", groups.head}, {"medium", groups.medium}, {"tail", groups.tail}};
  write_text(path_in(cfg, "dataset.json"), canonical(j));

  Checkpoint ckpt;
  ckpt.config = config_to_json(cfg);
  auto add = [&](const std::string& name, const data::LongTailedDataset& d) {
    ckpt.arrays.push_back({name + ".features", d.features.shape(), d.features.values()});
    std::vector<double> labels(d.labels.begin(), d.labels.end());
    ckpt.arrays.push_back({name + ".labels", {labels.size()}, labels});
  };
  add("source", source);
  add("target", target);
  add("eval", eval);
  save_checkpoint(path_in(cfg, "data.ckpt"), ckpt);
  out << "wrote " << cfg.output_dir << "\n";
  return 0;
}

int cmd_pretrain(const Options& o, std::ostream& out) {
  const ExperimentConfig cfg = resolve_config(o, Mode::Pretrain);
  const Prepared prep = prepare(cfg, o.backbone);
  ordered_json j = header(cfg);
  if (prep.pretrain) {
    j["pretrain"] = {{"steps", cfg.pretrain.steps},
                     {"initial_loss", prep.pretrain->initial_loss},
                     {"final_loss", prep.pretrain->final_loss}};
  }
  save_checkpoint(path_in(cfg, "backbone.ckpt"), backbone_checkpoint(cfg, *prep.backbone));
  write_text(path_in(cfg, "metrics.json"), canonical(j));
  out << "wrote " << path_in(cfg, "backbone.ckpt") << "\n";
  return 0;
}

int cmd_train(const Options& o, std::ostream& out, bool bilevel) {
  const ExperimentConfig cfg = resolve_config(o, bilevel ? Mode::Meta : Mode::Finetune);
  const Prepared prep = prepare(cfg, o.backbone);
  const peft::PeftPlan plan = cfg.peft.plan(cfg.backbone.num_blocks, bilevel);

  TrainOutcome result;
  auto model = std::make_unique<peft::InstrumentedModel>(
      peft::attach(prep.backbone, prep.head, plan, cfg.seed));
  result.initial_val_loss = meta::evaluate_model(*model, prep.eval, prep.groups, prep.loss).la_loss;
  try {
    result.run = bilevel ? meta::run_bilevel(*model, prep.target, cfg.schedule, cfg.seed)
                         : meta::run_finetune(*model, prep.target, cfg.schedule, cfg.seed);
  } catch (const TrainingError&) {
    save_checkpoint(path_in(cfg, "partial.ckpt"), model_checkpoint(cfg, *model));
    throw;
  }
  result.report = meta::evaluate_model(*model, prep.eval, prep.groups, prep.loss);

  ordered_json j = header(cfg);
  j["peft"] = {{"kind", peft::kind_name(plan.kind)},
               {"rank", plan.rank},
               {"sites", plan.sites.size()},
               {"scaling", bilevel ? ordered_json("modulated") : ordered_json(cfg.peft.alpha)}};
  j["schedule"] = config_to_json(cfg)["schedule"];
  j["schedule"]["effective_inner_lr"] = cfg.schedule.effective_inner_lr();
  j["training"] = run_json(result.run);
  j["initial_val_la_loss"] = result.initial_val_loss;
  j["metrics"] = metrics_json(result.report);
  write_text(path_in(cfg, "metrics.json"), canonical(j));
  if (bilevel) {
    write_text(path_in(cfg, "gamma.csv"), gamma_csv(result.report.gamma));
    write_text(path_in(cfg, "trajectory.csv"), trajectory_csv(result.run.trajectory));
  }
  save_checkpoint(path_in(cfg, "model.ckpt"), model_checkpoint(cfg, *model));
  out << summary_text(j);
  return 0;
}

int cmd_grid(const Options& o, std::ostream& out) {
  const ExperimentConfig cfg = resolve_config(o, Mode::Grid);
  const Prepared prep = prepare(cfg, o.backbone);
  const search::GridResult grid = run_grid(cfg, prep);
  ordered_json j = header(cfg);
  j["grid"] = config_to_json(cfg)["grid"];
  j["configs"] = grid.table.size();
  j["failed"] = std::count_if(grid.table.begin(), grid.table.end(),
                              [](const search::ConfigResult& r) { return r.failed; });
  j["best"] = config_result_json(grid.best);
  ordered_json table = ordered_json::array();
  for (const auto& r : grid.table) table.push_back(config_result_json(r));
  j["table"] = table;
  write_text(path_in(cfg, "metrics.json"), canonical(j));
  write_text(path_in(cfg, "heatmap.csv"), search::heatmap_csv(grid.table));
  out << summary_text(j);
  return 0;
}

int cmd_knapsack(const Options& o, std::ostream& out) {
  if (o.n > 16) throw ConfigError("--n: verification supports at most 16 items");
  const std::uint64_t seed = o.seed.value_or(7);
  auto rng = data::make_rng(seed, 0x6b6e);
  std::size_t verified = 0;
  for (std::size_t t = 0; t < o.trials; ++t) {
    std::uniform_int_distribution<std::size_t> size(1, std::max<std::size_t>(1, o.n));
    const auto inst = search::random_knapsack(size(rng), rng);
    verified += search::verify_reduction(inst);
  }
  if (!o.out.empty()) {
    fs::create_directories(o.out);
    ordered_json j = {{"mode", "knapsack-verify"}, {"seed", seed}, {"n", o.n},
                      {"trials", o.trials}, {"verified", verified}};
    write_text((fs::path(o.out) / "metrics.json").string(), canonical(j));
  }
  out << verified << "/" << o.trials << " verified\n";
  return verified == o.trials ? 0 : 1;
}

int cmd_report(const Options& o, std::ostream& out) {
  if (o.metrics.empty()) throw ConfigError("--metrics: missing metrics JSON path");
  std::ifstream in(o.metrics);
  if (!in) throw Error("cannot open '" + o.metrics + "'");
  ordered_json j;
  try {
    j = ordered_json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw Error("'" + o.metrics + "' is not valid JSON: " + e.what());
  }
  out << summary_text(j);
  return 0;
}

int cmd_features(const Options& o, std::ostream& out) {
  const ExperimentConfig cfg = resolve_config(o, Mode::Meta);
  if (o.stage != "random" && o.stage != "pretrained" && o.stage != "meta") {
    throw ConfigError("--stage: expected random, pretrained or meta");
  }
  const Prepared prep = prepare(cfg, o.backbone, o.stage != "random");
  ad::Tensor features;
  if (o.stage == "meta") {
    TrainOutcome t = run_meta(cfg, prep);
    features = t.model->features(prep.eval.features);
  } else {
    features = extract_features(*prep.backbone, prep.eval.features);
  }
  const std::size_t d = features.dim(1);
  std::string csv = "label";
  for (std::size_t k = 0; k < d; ++k) csv += ",f" + std::to_string(k);
  csv += '\n';
  char buf[32];
  for (std::size_t i = 0; i < prep.eval.size(); ++i) {
    csv += std::to_string(prep.eval.labels[i]);
    for (std::size_t k = 0; k < d; ++k) {
      std::snprintf(buf, sizeof buf, ",%.17g", features[i * d + k]);
      csv += buf;
    }
    csv += '\n';
  }
  write_text(path_in(cfg, "features.csv"), csv);
  out << "wrote " << path_in(cfg, "features.csv") << "\n";
  return 0;
}

}  // namespace

Prepared prepare(const ExperimentConfig& cfg, const std::string& backbone_path, bool pretrain) {
  Prepared p;
  std::tie(p.source, p.target) = data::generate(cfg.dataset);
  p.eval = data::generate_eval(cfg.dataset);
  p.groups = data::partition_groups(p.target.class_counts);
  p.loss = objective::LossConfig{cfg.schedule.tau, data::class_priors(p.target.class_counts)};

  auto weights = std::make_shared<BackboneWeights>(init_backbone(cfg.backbone));
  if (!backbone_path.empty()) {
    load_backbone(*weights, backbone_path);
  } else if (pretrain) {
    ClassifierHead source_head = init_head(cfg.backbone);
    p.pretrain = pretrain_source(*weights, source_head, p.source, cfg.pretrain);
  }
  weights->set_frozen(true);
  p.backbone = weights;
  p.head = init_head_class_means(extract_features(*weights, p.target.features), p.target.labels,
                                 cfg.dataset.num_classes);
  return p;
}

TrainOutcome run_meta(const ExperimentConfig& cfg, const Prepared& prep) {
  return train(cfg, prep, cfg.peft.plan(cfg.backbone.num_blocks, true), cfg.schedule, true);
}

TrainOutcome run_fixed(const ExperimentConfig& cfg, const Prepared& prep, double alpha,
                       const meta::MetaSchedule& schedule) {
  peft::PeftPlan plan = cfg.peft.plan(cfg.backbone.num_blocks, false);
  plan.scaling = peft::FixedAlpha{alpha};
  return train(cfg, prep, plan, schedule, false);
}

search::GridResult run_grid(const ExperimentConfig& cfg, const Prepared& prep, std::size_t workers) {
  search::SearchTask task;
  task.backbone = prep.backbone;
  task.head = prep.head;
  task.train = &prep.target;
  task.eval = &prep.eval;
  task.groups = prep.groups;
  return search::grid_search(task, cfg.grid, cfg.seed, workers);
}

std::string usage() {
  return "usage: mpft <command> [options]\n"
         "commands:\n"
         "  gen-data         --config FILE [--seed N] [--out DIR]\n"
         "  pretrain         --config FILE [--seed N] [--out DIR]\n"
         "  finetune         --config FILE [--seed N] [--out DIR] [--backbone CKPT]\n"
         "  meta-finetune    --config FILE [--seed N] [--out DIR] [--backbone CKPT]\n"
         "  grid-search      --config FILE [--seed N] [--out DIR] [--backbone CKPT]\n"
         "  knapsack-verify  [--n N] [--trials T] [--seed N] [--out DIR]\n"
         "  report           --metrics FILE\n"
         "  feature-dump     --config FILE [--stage random|pretrained|meta] [--out DIR]\n";
}

int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  if (args.empty() || std::find(kCommands.begin(), kCommands.end(), args.front()) == kCommands.end()) {
    if (!args.empty() && (args.front() == "-h" || args.front() == "--help")) {
      out << usage();
      return 0;
    }
    if (!args.empty()) err << "error: unknown command '" << args.front() << "'\n";
    err << usage();
    return 2;
  }
  const std::string command = args.front();

  CLI::App app{"mpft " + command};
  Options o;
  std::uint64_t seed = 0;
  auto* seed_opt = app.add_option("--seed", seed, "Override the config seed");
  app.add_option("--config", o.config, "Experiment config JSON");
  app.add_option("--out", o.out, "Output directory");
  app.add_option("--backbone", o.backbone, "Backbone checkpoint to load instead of pretraining");
  app.add_option("--metrics", o.metrics, "Metrics JSON to summarize");
  app.add_option("--stage", o.stage, "Feature stage: random, pretrained or meta");
  app.add_option("--n", o.n, "Maximum knapsack size");
  app.add_option("--trials", o.trials, "Number of random knapsack instances");

  std::vector<std::string> rest(args.rbegin(), args.rend() - 1);
  try {
    app.parse(rest);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  }
  if (seed_opt->count() > 0) o.seed = seed;

  try {
    if (command == "gen-data") return cmd_gen_data(o, out);
    if (command == "pretrain") return cmd_pretrain(o, out);
    if (command == "finetune") return cmd_train(o, out, false);
    if (command == "meta-finetune") return cmd_train(o, out, true);
    if (command == "grid-search") return cmd_grid(o, out);
    if (command == "knapsack-verify") return cmd_knapsack(o, out);
    if (command == "report") return cmd_report(o, out);
    return cmd_features(o, out);
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return 3;
  } catch (const SpecError& e) {
    err << "error: " << e.what() << "\n";
    return 3;
  } catch (const PlanError& e) {
    err << "error: " << e.what() << "\n";
    return 3;
  } catch (const TrainingError& e) {
    err << "error: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace mpft::cli
