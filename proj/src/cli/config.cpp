#include "mpft/cli/config.hpp"

#include <fstream>
#include <set>

#include "mpft/errors.hpp"

namespace mpft::cli {

using nlohmann::json;

std::string_view mode_name(Mode mode) {
  switch (mode) {
    case Mode::Pretrain: return "pretrain";
    case Mode::Finetune: return "finetune";
    case Mode::Meta: return "meta";
    case Mode::Grid: return "grid";
    case Mode::KnapsackVerify: return "knapsack-verify";
  }
  return "?";
}

Mode parse_mode(std::string_view name) {
  for (Mode m : {Mode::Pretrain, Mode::Finetune, Mode::Meta, Mode::Grid, Mode::KnapsackVerify}) {
    if (mode_name(m) == name) return m;
  }
  throw ConfigError("mode: unknown value '" + std::string(name) + "'");
}

std::vector<InsertionSite> PeftSection::resolved_sites(std::size_t num_blocks) const {
  if (!sites.empty()) return sites;
  std::vector<InsertionSite> all;
  for (std::size_t d = 1; d <= num_blocks; ++d) {
    for (Position p : kAllPositions) all.push_back(InsertionSite{d, p});
  }
  return all;
}

peft::PeftPlan PeftSection::plan(std::size_t num_blocks, bool modulated) const {
  peft::PeftPlan p;
  p.kind = kind;
  p.rank = rank;
  p.activation = activation;
  p.sites = resolved_sites(num_blocks);
  if (kind == peft::PeftKind::AdaptFormer && sites.empty()) {
    p.sites.clear();
    for (std::size_t d = 1; d <= num_blocks; ++d) p.sites.push_back(InsertionSite{d, Position::MLP2});
  }
  if (modulated) {
    p.scaling = peft::Modulated{};
  } else {
    p.scaling = peft::FixedAlpha{alpha};
  }
  return p;
}

void ExperimentConfig::resolve() {
  dataset.seed = seed;
  backbone.seed = seed;
  backbone.num_tokens = dataset.tokens_per_sample;
  backbone.input_dim = dataset.feature_dim;
  backbone.num_classes = dataset.num_classes;
  pretrain.seed = seed;
  grid.kind = peft.kind;
  grid.rank = peft.rank;
  grid.budget.tau = schedule.tau;
}

void ExperimentConfig::validate() const {
  dataset.validate();
  backbone.validate();
  if (pretrain.batch_size < 1) throw ConfigError("pretrain.batch_size must be >= 1");
  if (!(pretrain.lr > 0.0)) throw ConfigError("pretrain.lr must be positive");
  if (peft.rank < 1) throw ConfigError("peft.rank must be >= 1");
  if (!(peft.alpha > 0.0)) throw ConfigError("peft.alpha must be positive");
  try {
    peft.plan(backbone.num_blocks, false).validate(backbone);
  } catch (const Error& e) {
    throw ConfigError(std::string("peft.sites: ") + e.what());
  }
  schedule.validate();
  // An empty grid is fine until a grid search needs it.
  const bool grid_given = !grid.depths.empty() || !grid.positions.empty() || !grid.alphas.empty();
  if (mode == Mode::Grid || grid_given) grid.validate(backbone.num_blocks);
  if (output_dir.empty()) throw ConfigError("output_dir must not be empty");
}

namespace {

// Walks one JSON object, rejecting unknown keys and reporting the dotted
// path of any field that fails to convert.
class Reader {
 public:
  Reader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(label() + " must be an object");
  }

  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception&) {
      throw ConfigError(field(key) + ": wrong type");
    }
  }

  bool has(const char* key) const { return j_.contains(key); }

  Reader child(const char* key) {
    seen_.insert(key);
    return Reader(j_.at(key), field(key));
  }

  const json& raw(const char* key) {
    seen_.insert(key);
    return j_.at(key);
  }

  std::string field(const char* key) const { return path_.empty() ? key : path_ + "." + key; }

  void finish() const {
    for (const auto& item : j_.items()) {
      if (!seen_.count(item.key())) throw ConfigError(field(item.key().c_str()) + ": unknown field");
    }
  }

 private:
  std::string label() const { return path_.empty() ? "config" : path_; }

  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

template <typename F>
auto convert(const std::string& where, F&& fn) {
  try {
    return fn();
  } catch (const ConfigError& e) {
    throw ConfigError(where + ": " + e.what());
  }
}

data::DomainShift read_shift(Reader r) {
  std::string kind = "none";
  r.get("kind", kind);
  data::DomainShift shift;
  if (kind == "none") {
    shift = data::NoShift{};
  } else if (kind == "rotation") {
    data::RotationShift s;
    r.get("angle", s.angle);
    shift = s;
  } else if (kind == "channel_drop") {
    data::ChannelDropShift s;
    r.get("fraction", s.fraction);
    shift = s;
  } else {
    throw ConfigError(r.field("kind") + ": unknown shift '" + kind + "'");
  }
  r.finish();
  return shift;
}

data::SamplingStrategy read_sampler(Reader r) {
  std::string kind = "random_stratified";
  r.get("kind", kind);
  data::SamplingStrategy s;
  if (kind == "random_stratified") {
    data::RandomStratified v;
    r.get("ratio", v.ratio);
    s = v;
  } else if (kind == "class_balanced") {
    data::ClassBalanced v;
    r.get("per_class", v.per_class);
    s = v;
  } else if (kind == "tail_heavy") {
    data::TailHeavy v;
    r.get("ratio", v.ratio);
    s = v;
  } else {
    throw ConfigError(r.field("kind") + ": unknown sampler '" + kind + "'");
  }
  r.finish();
  return s;
}

std::vector<InsertionSite> read_sites(const json& j, const std::string& where) {
  if (j.is_string() && j.get<std::string>() == "all") return {};
  if (!j.is_array()) throw ConfigError(where + ": expected \"all\" or a list of \"depth:Position\"");
  std::vector<InsertionSite> sites;
  for (const json& item : j) {
    if (!item.is_string()) throw ConfigError(where + ": site entries must be strings");
    const std::string s = item.get<std::string>();
    const auto colon = s.find(':');
    if (colon == std::string::npos || colon == 0) throw ConfigError(where + ": bad site '" + s + "'");
    std::size_t depth = 0;
    try {
      std::size_t used = 0;
      depth = std::stoul(s.substr(0, colon), &used);
      if (used != colon) throw std::invalid_argument(s);
    } catch (const std::exception&) {
      throw ConfigError(where + ": bad site depth in '" + s + "'");
    }
    sites.push_back(InsertionSite{depth, convert(where, [&] { return parse_position(s.substr(colon + 1)); })});
  }
  if (sites.empty()) throw ConfigError(where + ": site list is empty");
  return sites;
}

}  // namespace

ExperimentConfig config_from_json(const json& j) {
  ExperimentConfig cfg;
  Reader root(j, "");
  root.get("seed", cfg.seed);
  root.get("output_dir", cfg.output_dir);
  if (root.has("mode")) {
    std::string m;
    root.get("mode", m);
    cfg.mode = parse_mode(m);
  }

  if (root.has("dataset")) {
    Reader r = root.child("dataset");
    auto& d = cfg.dataset;
    r.get("num_classes", d.num_classes);
    r.get("n_max", d.n_max);
    r.get("imbalance_ratio", d.imbalance_ratio);
    r.get("feature_dim", d.feature_dim);
    r.get("tokens_per_sample", d.tokens_per_sample);
    r.get("noise", d.noise);
    r.get("prototype_scale", d.prototype_scale);
    r.get("source_per_class", d.source_per_class);
    r.get("eval_per_class", d.eval_per_class);
    if (r.has("shift")) d.shift = read_shift(r.child("shift"));
    r.finish();
  }

  if (root.has("backbone")) {
    Reader r = root.child("backbone");
    auto& b = cfg.backbone;
    r.get("num_blocks", b.num_blocks);
    r.get("model_dim", b.model_dim);
    r.get("num_heads", b.num_heads);
    r.get("ffn_dim", b.ffn_dim);
    r.get("ln_eps", b.ln_eps);
    r.finish();
  }

  if (root.has("pretrain")) {
    Reader r = root.child("pretrain");
    r.get("steps", cfg.pretrain.steps);
    r.get("lr", cfg.pretrain.lr);
    r.get("batch_size", cfg.pretrain.batch_size);
    r.finish();
  }

  if (root.has("peft")) {
    Reader r = root.child("peft");
    auto& p = cfg.peft;
    if (r.has("kind")) {
      std::string k;
      r.get("kind", k);
      p.kind = convert("peft.kind", [&] { return peft::parse_kind(k); });
    }
    r.get("rank", p.rank);
    r.get("alpha", p.alpha);
    if (r.has("activation")) {
      std::string a;
      r.get("activation", a);
      if (a == "relu") {
        p.activation = peft::Activation::Relu;
      } else if (a == "identity") {
        p.activation = peft::Activation::Identity;
      } else {
        throw ConfigError("peft.activation: unknown value '" + a + "'");
      }
    }
    if (r.has("sites")) p.sites = read_sites(r.raw("sites"), "peft.sites");
    r.finish();
  }

  if (root.has("schedule")) {
    Reader r = root.child("schedule");
    auto& s = cfg.schedule;
    r.get("inner_steps", s.inner_steps);
    r.get("max_epochs", s.max_epochs);
    r.get("inner_lr", s.inner_lr);
    r.get("outer_lr", s.outer_lr);
    r.get("batch_size", s.batch_size);
    r.get("scale_inner_lr", s.scale_inner_lr);
    r.get("momentum", s.momentum);
    r.get("outer_l2", s.outer_l2);
    r.get("tau", s.tau);
    if (r.has("adam")) {
      Reader a = r.child("adam");
      a.get("beta1", s.adam.beta1);
      a.get("beta2", s.adam.beta2);
      a.get("eps", s.adam.eps);
      a.finish();
    }
    if (r.has("early_stop")) {
      Reader e = r.child("early_stop");
      e.get("enabled", s.early_stop.enabled);
      e.get("min_improve", s.early_stop.min_improve);
      e.get("patience", s.early_stop.patience);
      e.finish();
    }
    if (r.has("sampler")) s.sampler = read_sampler(r.child("sampler"));
    r.finish();
  }

  cfg.grid.depths = {1};
  cfg.grid.positions = {Position::Q};
  cfg.grid.alphas = search::default_alpha_grid();
  if (root.has("grid")) {
    Reader r = root.child("grid");
    auto& g = cfg.grid;
    r.get("depths", g.depths);
    if (r.has("positions")) {
      std::vector<std::string> names;
      r.get("positions", names);
      g.positions.clear();
      for (const auto& n : names) g.positions.push_back(convert("grid.positions", [&] { return parse_position(n); }));
    }
    r.get("alphas", g.alphas);
    if (r.has("depth_mode")) {
      std::string m;
      r.get("depth_mode", m);
      g.depth_mode = convert("grid.depth_mode", [&] { return search::parse_depth_mode(m); });
    }
    if (r.has("budget")) {
      Reader b = r.child("budget");
      b.get("steps", g.budget.steps);
      b.get("lr", g.budget.lr);
      b.get("batch_size", g.budget.batch_size);
      b.finish();
    }
    r.finish();
  }
  root.finish();

  cfg.resolve();
  cfg.validate();
  return cfg;
}

ordered_json config_to_json(const ExperimentConfig& cfg) {
  ordered_json j;
  j["seed"] = cfg.seed;
  j["mode"] = mode_name(cfg.mode);
  j["output_dir"] = cfg.output_dir;

  const auto& d = cfg.dataset;
  ordered_json shift;
  std::visit(
      [&](const auto& s) {
        using S = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<S, data::NoShift>) {
          shift["kind"] = "none";
        } else if constexpr (std::is_same_v<S, data::RotationShift>) {
          shift["kind"] = "rotation";
          shift["angle"] = s.angle;
        } else {
          shift["kind"] = "channel_drop";
          shift["fraction"] = s.fraction;
        }
      },
      d.shift);
  j["dataset"] = {{"num_classes", d.num_classes},
                  {"n_max", d.n_max},
                  {"imbalance_ratio", d.imbalance_ratio},
                  {"feature_dim", d.feature_dim},
                  {"tokens_per_sample", d.tokens_per_sample},
                  {"noise", d.noise},
                  {"prototype_scale", d.prototype_scale},
                  {"source_per_class", d.source_per_class},
                  {"eval_per_class", d.eval_per_class},
                  {"shift", shift}};

  const auto& b = cfg.backbone;
  j["backbone"] = {{"num_blocks", b.num_blocks},
                   {"model_dim", b.model_dim},
                   {"num_heads", b.num_heads},
                   {"ffn_dim", b.ffn_dim},
                   {"ln_eps", b.ln_eps}};
  j["pretrain"] = {{"steps", cfg.pretrain.steps},
                   {"lr", cfg.pretrain.lr},
                   {"batch_size", cfg.pretrain.batch_size}};

  const auto& p = cfg.peft;
  ordered_json sites;
  if (p.sites.empty()) {
    sites = "all";
  } else {
    sites = ordered_json::array();
    for (const auto& s : p.sites) sites.push_back(site_name(s));
  }
  j["peft"] = {{"kind", peft::kind_name(p.kind)},
               {"rank", p.rank},
               {"alpha", p.alpha},
               {"activation", p.activation == peft::Activation::Relu ? "relu" : "identity"},
               {"sites", sites}};

  const auto& s = cfg.schedule;
  ordered_json sampler;
  std::visit(
      [&](const auto& v) {
        using S = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<S, data::RandomStratified>) {
          sampler = {{"kind", "random_stratified"}, {"ratio", v.ratio}};
        } else if constexpr (std::is_same_v<S, data::ClassBalanced>) {
          sampler = {{"kind", "class_balanced"}, {"per_class", v.per_class}};
        } else {
          sampler = {{"kind", "tail_heavy"}, {"ratio", v.ratio}};
        }
      },
      s.sampler);
  j["schedule"] = {{"inner_steps", s.inner_steps},
                   {"max_epochs", s.max_epochs},
                   {"inner_lr", s.inner_lr},
                   {"outer_lr", s.outer_lr},
                   {"batch_size", s.batch_size},
                   {"scale_inner_lr", s.scale_inner_lr},
                   {"momentum", s.momentum},
                   {"outer_l2", s.outer_l2},
                   {"tau", s.tau},
                   {"adam", {{"beta1", s.adam.beta1}, {"beta2", s.adam.beta2}, {"eps", s.adam.eps}}},
                   {"early_stop",
                    {{"enabled", s.early_stop.enabled},
                     {"min_improve", s.early_stop.min_improve},
                     {"patience", s.early_stop.patience}}},
                   {"sampler", sampler}};

  const auto& g = cfg.grid;
  ordered_json positions = ordered_json::array();
  for (Position pos : g.positions) positions.push_back(position_name(pos));
  j["grid"] = {{"depths", g.depths},
               {"positions", positions},
               {"alphas", g.alphas},
               {"depth_mode", search::depth_mode_name(g.depth_mode)},
               {"budget",
                {{"steps", g.budget.steps}, {"lr", g.budget.lr}, {"batch_size", g.budget.batch_size}}}};
  return j;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open '" + path + "'");
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config: '" + path + "' is not valid JSON (" + e.what() + ")");
  }
  return config_from_json(j);
}

}  // namespace mpft::cli
