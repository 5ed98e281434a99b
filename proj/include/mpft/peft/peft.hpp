#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "mpft/autodiff/ops.hpp"
#include "mpft/backbone/backbone.hpp"
#include "mpft/peft/site.hpp"

namespace mpft::peft {

enum class PeftKind { LoRA, Adapter, AdaptFormer };
enum class Activation { Relu, Identity };

std::string_view kind_name(PeftKind kind);
PeftKind parse_kind(std::string_view name);

struct FixedAlpha {
  double alpha = 0.1;
};
struct Modulated {};
using ScalingMode = std::variant<FixedAlpha, Modulated>;

struct PeftPlan {
  PeftKind kind = PeftKind::LoRA;
  std::vector<InsertionSite> sites;
  std::size_t rank = 4;
  ScalingMode scaling = FixedAlpha{};
  Activation activation = Activation::Relu;

  bool modulated() const { return std::holds_alternative<Modulated>(scaling); }
  /// Throws PlanError on empty/duplicate sites, non-positive alpha or rank,
  /// or an AdaptFormer site other than MLP2; SiteError on out-of-range depth.
  void validate(const BackboneConfig& cfg) const;
};

/// Input and output widths of the linear map hosted at a position.
std::pair<std::size_t, std::size_t> site_dims(const BackboneConfig& cfg, Position p);

/// One additive module. LoRA uses `a` [d_out x r] and `b` [d_in x r];
/// Adapter/AdaptFormer use `down` [d x r] + `down_bias` [r] and `up` [r x d]
/// + `up_bias` [d]. The factor that multiplies last (b, up/up_bias) starts
/// at zero, so a fresh module contributes an identically zero delta.
struct PeftModule {
  PeftKind kind = PeftKind::LoRA;
  Activation activation = Activation::Relu;
  ad::Tensor a, b;
  ad::Tensor down, down_bias, up, up_bias;

  std::vector<std::pair<std::string, ad::Tensor*>> parameters();
  std::vector<std::pair<std::string, const ad::Tensor*>> parameters() const;
  std::size_t parameter_count() const;
};

PeftModule make_lora(std::size_t d_in, std::size_t d_out, std::size_t rank, std::mt19937_64& rng);
PeftModule make_bottleneck(PeftKind kind, std::size_t dim, std::size_t rank, Activation act,
                           std::mt19937_64& rng);

/// x * B * A^T.
ad::Var delta_lora(ad::Var x, ad::Var a, ad::Var b);
/// sigma(x * down + down_bias) * up + up_bias, row-wise.
ad::Var delta_bottleneck(ad::Var x, ad::Var down, ad::Var down_bias, ad::Var up, ad::Var up_bias,
                         Activation act);

// Tensor-level evaluation of a module's delta, for inspection and tests.
ad::Tensor delta_lora(const ad::Tensor& x, const PeftModule& m);
ad::Tensor delta_adapter(const ad::Tensor& x, const PeftModule& m);
ad::Tensor delta_adaptformer(const ad::Tensor& x, const PeftModule& m);

/// Per-site learnable scale gamma = softplus(raw). Raw values start at
/// log(e - 1), which puts every gamma at exactly 1.0.
class Modulator {
 public:
  static double initial_raw();

  explicit Modulator(std::span<const InsertionSite> sites);

  const std::vector<InsertionSite>& sites() const { return sites_; }
  double gamma(const InsertionSite& site) const;
  ad::Tensor& raw(const InsertionSite& site);
  const ad::Tensor& raw(const InsertionSite& site) const;
  std::vector<std::pair<InsertionSite, double>> gamma_table() const;

  /// Test-only bypass: the site uses `value` as gamma directly, skipping the
  /// softplus. Training code never calls this.
  void force_gamma_for_testing(const InsertionSite& site, double value);
  void clear_forced_gamma();
  std::optional<double> forced_gamma(const InsertionSite& site) const;

 private:
  std::vector<InsertionSite> sites_;
  std::map<InsertionSite, ad::Tensor> raw_;
  std::map<InsertionSite, double> forced_;
};

struct ParamCounts {
  std::size_t tuner = 0;
  std::size_t head = 0;
  std::size_t modulator = 0;
};

/// Which parameter groups a forward pass records as tracked leaves.
struct Trainables {
  bool peft = true;
  bool head = true;
  bool modulator = true;
};

/// Frozen backbone plus its attached modules, head and (in Modulated mode)
/// modulator. Per site p the hosted sublayer output becomes
/// f(x) + gamma_p * delta_p(x) or f(x) + alpha * delta_p(x).
class InstrumentedModel {
 public:
  InstrumentedModel(std::shared_ptr<const BackboneWeights> backbone, ClassifierHead head,
                    PeftPlan plan, std::uint64_t seed);

  ForwardOutput forward(ad::Tape& tape, const ad::Tensor& x, Trainables track = {});
  /// Untracked logits / features for a whole input tensor.
  ad::Tensor logits(const ad::Tensor& x);
  ad::Tensor features(const ad::Tensor& x);

  const PeftPlan& plan() const { return plan_; }
  const BackboneWeights& backbone() const { return *backbone_; }
  std::shared_ptr<const BackboneWeights> backbone_ptr() const { return backbone_; }
  ClassifierHead& head() { return head_; }
  const ClassifierHead& head() const { return head_; }
  PeftModule& module(const InsertionSite& site);
  const std::map<InsertionSite, PeftModule>& modules() const { return modules_; }
  Modulator* modulator() { return modulator_ ? &*modulator_ : nullptr; }
  const Modulator* modulator() const { return modulator_ ? &*modulator_ : nullptr; }

  /// Trainable PEFT tensors (phi) in site order.
  std::vector<std::pair<std::string, ad::Tensor*>> peft_parameters();
  std::vector<std::pair<std::string, ad::Tensor*>> head_parameters();
  /// Raw modulator tensors in site order; empty in FixedAlpha mode.
  std::vector<std::pair<std::string, ad::Tensor*>> modulator_parameters();

  ParamCounts count_trainable() const;

  void set_probe(SiteProbe probe) { probe_ = std::move(probe); }

 private:
  std::shared_ptr<const BackboneWeights> backbone_;
  ClassifierHead head_;
  PeftPlan plan_;
  std::map<InsertionSite, PeftModule> modules_;
  std::optional<Modulator> modulator_;
  SiteProbe probe_;
};

/// Validates the plan, creates one zero-effect module per site with seeded
/// initialization, and a modulator iff the plan is Modulated. The backbone
/// must be frozen.
InstrumentedModel attach(std::shared_ptr<const BackboneWeights> backbone, const ClassifierHead& head,
                         const PeftPlan& plan, std::uint64_t seed);

ParamCounts count_trainable(const InstrumentedModel& model);

}  // namespace mpft::peft
