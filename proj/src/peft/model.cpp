#include "mpft/data/longtail.hpp"
#include "mpft/errors.hpp"
#include "mpft/peft/peft.hpp"

namespace mpft::peft {

using ad::Tensor;
using ad::Var;

InstrumentedModel::InstrumentedModel(std::shared_ptr<const BackboneWeights> backbone,
                                     ClassifierHead head, PeftPlan plan, std::uint64_t seed)
    : backbone_(std::move(backbone)), head_(std::move(head)), plan_(std::move(plan)) {
  if (!backbone_) throw ContractError("attach needs a backbone");
  if (!backbone_->frozen) throw ContractError("PEFT modules attach to a frozen backbone only");
  const BackboneConfig& cfg = backbone_->config;
  plan_.validate(cfg);
  head_.set_trainable(true);

  auto rng = data::make_rng(seed, 0x9ef7);
  for (const InsertionSite& site : plan_.sites) {
    const auto [d_in, d_out] = site_dims(cfg, site.position);
    switch (plan_.kind) {
      case PeftKind::LoRA:
        modules_.emplace(site, make_lora(d_in, d_out, plan_.rank, rng));
        break;
      case PeftKind::Adapter:
        modules_.emplace(site, make_bottleneck(plan_.kind, d_out, plan_.rank, plan_.activation, rng));
        break;
      case PeftKind::AdaptFormer:
        modules_.emplace(site,
                         make_bottleneck(plan_.kind, cfg.model_dim, plan_.rank, plan_.activation, rng));
        break;
    }
  }
  if (plan_.modulated()) modulator_.emplace(plan_.sites);
}

ForwardOutput InstrumentedModel::forward(ad::Tape& tape, const Tensor& x, Trainables track) {
  ForwardHooks hooks;
  hooks.probe = probe_;
  for (auto& [where, mod] : modules_) {
    PeftModule* m = &mod;
    hooks.hooks.emplace(where, [this, &tape, m, track](const InsertionSite& site,
                                                       const SiteActivations& act) {
      auto leaf = [&](Tensor& t) { return tape.leaf(t, track.peft); };
      Var delta = [&] {
        switch (m->kind) {
          case PeftKind::LoRA:
            return delta_lora(act.input, leaf(m->a), leaf(m->b));
          case PeftKind::Adapter:
            return delta_bottleneck(act.output, leaf(m->down), leaf(m->down_bias), leaf(m->up),
                                    leaf(m->up_bias), m->activation);
          case PeftKind::AdaptFormer:
            break;
        }
        return delta_bottleneck(act.ffn_input, leaf(m->down), leaf(m->down_bias), leaf(m->up),
                                leaf(m->up_bias), m->activation);
      }();
      if (modulator_) {
        if (auto forced = modulator_->forced_gamma(site)) {
          return ad::scale_by(delta, tape.constant(Tensor::scalar(*forced)));
        }
        Var gamma = ad::softplus(tape.leaf(modulator_->raw(site), track.modulator));
        return ad::scale_by(delta, gamma);
      }
      return ad::scale(delta, std::get<FixedAlpha>(plan_.scaling).alpha);
    });
  }
  return mpft::forward(tape, *backbone_, head_, x, &hooks, track.head);
}

Tensor InstrumentedModel::logits(const Tensor& x) {
  ad::Tape tape;
  return forward(tape, x, Trainables{false, false, false}).logits.value();
}

Tensor InstrumentedModel::features(const Tensor& x) {
  ad::Tape tape;
  return forward(tape, x, Trainables{false, false, false}).features.value();
}

PeftModule& InstrumentedModel::module(const InsertionSite& site) {
  auto it = modules_.find(site);
  if (it == modules_.end()) throw SiteError("no module attached at " + site_name(site));
  return it->second;
}

std::vector<std::pair<std::string, Tensor*>> InstrumentedModel::peft_parameters() {
  std::vector<std::pair<std::string, Tensor*>> out;
  for (auto& [site, mod] : modules_) {
    for (auto& [name, t] : mod.parameters()) out.emplace_back("peft." + site_name(site) + "." + name, t);
  }
  return out;
}

std::vector<std::pair<std::string, Tensor*>> InstrumentedModel::head_parameters() {
  return {{"head.weight", &head_.weight}, {"head.bias", &head_.bias}};
}

std::vector<std::pair<std::string, Tensor*>> InstrumentedModel::modulator_parameters() {
  std::vector<std::pair<std::string, Tensor*>> out;
  if (!modulator_) return out;
  for (const InsertionSite& s : modulator_->sites()) {
    out.emplace_back("modulator." + site_name(s), &modulator_->raw(s));
  }
  return out;
}

ParamCounts InstrumentedModel::count_trainable() const {
  ParamCounts counts;
  for (const auto& [site, mod] : modules_) counts.tuner += mod.parameter_count();
  counts.head = head_.weight.size() + head_.bias.size();
  counts.modulator = modulator_ ? modulator_->sites().size() : 0;
  return counts;
}

InstrumentedModel attach(std::shared_ptr<const BackboneWeights> backbone, const ClassifierHead& head,
                         const PeftPlan& plan, std::uint64_t seed) {
  return InstrumentedModel(std::move(backbone), head, plan, seed);
}

ParamCounts count_trainable(const InstrumentedModel& model) { return model.count_trainable(); }

}  // namespace mpft::peft
