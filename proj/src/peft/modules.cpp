#include <algorithm>
#include <cmath>
#include <set>

#include "mpft/errors.hpp"
#include "mpft/peft/peft.hpp"

namespace mpft::peft {

using ad::Tensor;
using ad::Var;

std::string_view kind_name(PeftKind kind) {
  switch (kind) {
    case PeftKind::LoRA: return "lora";
    case PeftKind::Adapter: return "adapter";
    case PeftKind::AdaptFormer: return "adaptformer";
  }
  return "?";
}

PeftKind parse_kind(std::string_view name) {
  for (PeftKind k : {PeftKind::LoRA, PeftKind::Adapter, PeftKind::AdaptFormer}) {
    if (kind_name(k) == name) return k;
  }
  throw ConfigError("unknown PEFT kind '" + std::string(name) + "'");
}

void PeftPlan::validate(const BackboneConfig& cfg) const {
  if (sites.empty()) throw PlanError("PEFT plan has no insertion sites");
  if (rank < 1) throw PlanError("PEFT rank must be >= 1");
  if (const auto* fixed = std::get_if<FixedAlpha>(&scaling); fixed && !(fixed->alpha > 0.0)) {
    throw PlanError("fixed scaling factor alpha must be positive");
  }
  std::set<InsertionSite> seen;
  for (const InsertionSite& s : sites) {
    if (s.depth < 1 || s.depth > cfg.num_blocks) {
      throw SiteError("insertion site " + site_name(s) + " outside blocks 1.." +
                      std::to_string(cfg.num_blocks));
    }
    if (!seen.insert(s).second) throw PlanError("duplicate insertion site " + site_name(s));
    if (kind == PeftKind::AdaptFormer && s.position != Position::MLP2) {
      throw PlanError("AdaptFormer attaches in parallel to the FFN (position MLP2), not " +
                      site_name(s));
    }
  }
}

std::pair<std::size_t, std::size_t> site_dims(const BackboneConfig& cfg, Position p) {
  switch (p) {
    case Position::MLP1: return {cfg.model_dim, cfg.ffn_dim};
    case Position::MLP2: return {cfg.ffn_dim, cfg.model_dim};
    default: return {cfg.model_dim, cfg.model_dim};
  }
}

std::vector<std::pair<std::string, Tensor*>> PeftModule::parameters() {
  if (kind == PeftKind::LoRA) return {{"A", &a}, {"B", &b}};
  return {{"W_down", &down}, {"b_down", &down_bias}, {"W_up", &up}, {"b_up", &up_bias}};
}

std::vector<std::pair<std::string, const Tensor*>> PeftModule::parameters() const {
  std::vector<std::pair<std::string, const Tensor*>> out;
  for (auto& [name, t] : const_cast<PeftModule*>(this)->parameters()) out.emplace_back(name, t);
  return out;
}

std::size_t PeftModule::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : parameters()) n += t->size();
  return n;
}

namespace {

Tensor gaussian(std::mt19937_64& rng, std::size_t rows, std::size_t cols, double stddev) {
  std::normal_distribution<double> normal(0.0, stddev);
  std::vector<double> v(rows * cols);
  for (double& x : v) x = normal(rng);
  return Tensor({rows, cols}, std::move(v), true);
}

}  // namespace

PeftModule make_lora(std::size_t d_in, std::size_t d_out, std::size_t rank, std::mt19937_64& rng) {
  PeftModule m;
  m.kind = PeftKind::LoRA;
  m.a = gaussian(rng, d_out, rank, 1.0 / std::sqrt(static_cast<double>(rank)));
  m.b = Tensor::zeros({d_in, rank}, true);
  return m;
}

PeftModule make_bottleneck(PeftKind kind, std::size_t dim, std::size_t rank, Activation act,
                           std::mt19937_64& rng) {
  if (kind == PeftKind::LoRA) throw PlanError("make_bottleneck called for LoRA");
  PeftModule m;
  m.kind = kind;
  m.activation = act;
  m.down = gaussian(rng, dim, rank, 1.0 / std::sqrt(static_cast<double>(dim)));
  m.down_bias = Tensor::zeros({rank}, true);
  m.up = Tensor::zeros({rank, dim}, true);
  m.up_bias = Tensor::zeros({dim}, true);
  return m;
}

Var delta_lora(Var x, Var a, Var b) {
  if (x.shape().back() != b.shape()[0]) {
    throw DimensionError("LoRA input width " + std::to_string(x.shape().back()) +
                         " does not match B " + ad::shape_str(b.shape()));
  }
  return ad::matmul(ad::matmul(x, b), ad::transpose(a));
}

Var delta_bottleneck(Var x, Var down, Var down_bias, Var up, Var up_bias, Activation act) {
  if (x.shape().back() != down.shape()[0]) {
    throw DimensionError("bottleneck input width " + std::to_string(x.shape().back()) +
                         " does not match W_down " + ad::shape_str(down.shape()));
  }
  Var hidden = ad::add_row(ad::matmul(x, down), down_bias);
  if (act == Activation::Relu) hidden = ad::relu(hidden);
  return ad::add_row(ad::matmul(hidden, up), up_bias);
}

Tensor delta_lora(const Tensor& x, const PeftModule& m) {
  if (m.kind != PeftKind::LoRA) throw PlanError("delta_lora needs a LoRA module");
  ad::Tape tape;
  return delta_lora(tape.constant(x), tape.constant(m.a), tape.constant(m.b)).value();
}

Tensor delta_adapter(const Tensor& x, const PeftModule& m) {
  if (m.kind == PeftKind::LoRA) throw PlanError("delta_adapter needs a bottleneck module");
  ad::Tape tape;
  return delta_bottleneck(tape.constant(x), tape.constant(m.down), tape.constant(m.down_bias),
                          tape.constant(m.up), tape.constant(m.up_bias), m.activation)
      .value();
}

Tensor delta_adaptformer(const Tensor& x, const PeftModule& m) {
  // Same bottleneck as the sequential adapter; only the attachment differs.
  return delta_adapter(x, m);
}

double Modulator::initial_raw() { return std::log(std::expm1(1.0)); }

Modulator::Modulator(std::span<const InsertionSite> sites) : sites_(sites.begin(), sites.end()) {
  for (const InsertionSite& s : sites_) raw_.emplace(s, Tensor::scalar(initial_raw(), true));
}

double Modulator::gamma(const InsertionSite& site) const {
  if (auto f = forced_gamma(site)) return *f;
  const double x = raw(site)[0];
  return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
}

Tensor& Modulator::raw(const InsertionSite& site) {
  auto it = raw_.find(site);
  if (it == raw_.end()) throw SiteError("no modulator entry for site " + site_name(site));
  return it->second;
}

const Tensor& Modulator::raw(const InsertionSite& site) const {
  return const_cast<Modulator*>(this)->raw(site);
}

std::vector<std::pair<InsertionSite, double>> Modulator::gamma_table() const {
  std::vector<std::pair<InsertionSite, double>> out;
  for (const InsertionSite& s : sites_) out.emplace_back(s, gamma(s));
  return out;
}

void Modulator::force_gamma_for_testing(const InsertionSite& site, double value) {
  (void)raw(site);
  forced_[site] = value;
}

void Modulator::clear_forced_gamma() { forced_.clear(); }

std::optional<double> Modulator::forced_gamma(const InsertionSite& site) const {
  if (auto it = forced_.find(site); it != forced_.end()) return it->second;
  return std::nullopt;
}

}  // namespace mpft::peft
