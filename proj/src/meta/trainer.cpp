#include <algorithm>
#include <cmath>
#include <numeric>

#include "mpft/errors.hpp"
#include "mpft/meta/meta.hpp"

namespace mpft::meta {

namespace {

ParamList inner_parameters(peft::InstrumentedModel& model) {
  ParamList params = model.peft_parameters();
  for (auto& p : model.head_parameters()) params.push_back(p);
  return params;
}

void clear_grads(const ParamList& params) {
  for (const auto& [name, p] : params) p->clear_grad();
}

data::Batch draw_val(const data::LongTailedDataset& train, const MetaSchedule& schedule,
                     std::mt19937_64& rng) {
  const auto idx = data::sample_outer_subset(train.labels, train.num_classes(), schedule.sampler, rng);
  return data::gather(train, idx);
}

RunResult train_loop(peft::InstrumentedModel& model, const data::LongTailedDataset& train,
                     const MetaSchedule& schedule, std::uint64_t seed, bool outer,
                     const StepObserver& observer) {
  schedule.validate();
  train.validate();
  if (outer && !model.plan().modulated()) {
    throw ContractError("bi-level training needs a model attached in Modulated mode");
  }
  const objective::LossConfig loss{schedule.tau, data::class_priors(train.class_counts)};
  auto batch_rng = data::make_rng(seed, 1);
  auto val_rng = data::make_rng(seed, 2);
  Sgd sgd(schedule.effective_inner_lr(), schedule.momentum);
  Adam adam(schedule.outer_lr, schedule.adam);

  const std::size_t n = train.size();
  const std::size_t per_epoch = (n + schedule.batch_size - 1) / schedule.batch_size;
  const std::size_t k = schedule.inner_steps;

  RunResult result;
  MetaState& st = result.state;
  std::vector<std::size_t> order(n);

  auto notify = [&](StepEvent::Kind kind, double value) {
    if (observer) observer(StepEvent{kind, st.epoch, st.inner_steps, st.outer_steps, value}, model);
  };

  for (std::size_t epoch = 1; epoch <= schedule.max_epochs; ++epoch) {
    st.epoch = epoch;
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), batch_rng);
    std::optional<data::Batch> latest_val;

    for (std::size_t s = 0; s < per_epoch; ++s) {
      const std::size_t lo = s * schedule.batch_size;
      const std::size_t hi = std::min(n, lo + schedule.batch_size);
      const data::Batch batch =
          data::gather(train, std::span<const std::size_t>(order.data() + lo, hi - lo));
      const double l = inner_step(model, sgd, batch, loss, st.inner_steps + 1);
      ++st.inner_steps;
      result.train_losses.push_back(l);
      notify(StepEvent::Kind::Inner, l);

      if (st.inner_steps % k != 0) continue;
      latest_val = draw_val(train, schedule, val_rng);
      // The modulator stays at its initial value through the first window.
      if (!outer || st.inner_steps == k) continue;
      const double vl = outer_step(model, adam, *latest_val, loss, schedule.outer_l2, st.outer_steps + 1);
      ++st.outer_steps;
      for (const auto& [site, g] : model.modulator()->gamma_table()) {
        result.trajectory.push_back(GammaRecord{st.outer_steps, st.inner_steps, site, g});
      }
      notify(StepEvent::Kind::Outer, vl);
    }

    if (!latest_val) latest_val = draw_val(train, schedule, val_rng);
    const double acc = balanced_accuracy(model, *latest_val, train.num_classes());
    st.val_history.push_back(acc);
    notify(StepEvent::Kind::EpochEnd, acc);
    if (schedule.early_stop.enabled &&
        check_early_stop(st.val_history, schedule.early_stop.min_improve, schedule.early_stop.patience)) {
      st.early_stopped = true;
      break;
    }
  }
  return result;
}

}  // namespace

void MetaSchedule::validate() const {
  if (inner_steps < 1) throw ConfigError("schedule.inner_steps must be >= 1");
  if (!(inner_lr > 0.0)) throw ConfigError("schedule.inner_lr must be positive");
  if (!(outer_lr > 0.0)) throw ConfigError("schedule.outer_lr must be positive");
  if (batch_size < 1) throw ConfigError("schedule.batch_size must be >= 1");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("schedule.momentum must lie in [0, 1)");
  if (!(outer_l2 >= 0.0)) throw ConfigError("schedule.outer_l2 must be non-negative");
  if (!(tau >= 0.0)) throw ConfigError("schedule.tau must be non-negative");
  if (early_stop.patience < 1) throw ConfigError("schedule.early_stop.patience must be >= 1");
  std::visit(
      [](const auto& s) {
        using S = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<S, data::ClassBalanced>) {
          if (s.per_class < 1) throw ConfigError("schedule.sampler.per_class must be >= 1");
        } else {
          if (!(s.ratio > 0.0 && s.ratio < 1.0)) {
            throw ConfigError("schedule.sampler.ratio must lie in (0, 1)");
          }
        }
      },
      sampler);
}

double MetaSchedule::effective_inner_lr() const {
  return scale_inner_lr ? scale_lr(inner_lr, batch_size) : inner_lr;
}

double inner_step(peft::InstrumentedModel& model, Sgd& sgd, const data::Batch& batch,
                  const objective::LossConfig& loss, std::size_t step_index) {
  const ParamList params = inner_parameters(model);
  ad::Tape tape;
  const auto out = model.forward(tape, batch.x, peft::Trainables{true, true, false});
  const ad::Var l = objective::la_loss(out.logits, batch.labels, loss);
  const double value = l.value().item();
  if (!std::isfinite(value)) {
    throw TrainingError("non-finite training loss at inner step " + std::to_string(step_index));
  }
  tape.backward(l);
  try {
    sgd.step(params, step_index);
  } catch (...) {
    clear_grads(params);
    throw;
  }
  clear_grads(params);
  return value;
}

std::vector<double> outer_gradient(peft::InstrumentedModel& model, const data::Batch& val,
                                   const objective::LossConfig& loss) {
  const ParamList raw = model.modulator_parameters();
  if (raw.empty()) throw ContractError("outer gradient needs a modulator");
  ad::Tape tape;
  const auto out = model.forward(tape, val.x, peft::Trainables{false, false, true});
  tape.backward(objective::la_loss(out.logits, val.labels, loss));
  std::vector<double> grads;
  grads.reserve(raw.size());
  for (const auto& [name, p] : raw) {
    grads.push_back(p->grad()[0]);
    p->clear_grad();
  }
  return grads;
}

double outer_step(peft::InstrumentedModel& model, Adam& adam, const data::Batch& val,
                  const objective::LossConfig& loss, double l2, std::size_t step_index) {
  const ParamList raw = model.modulator_parameters();
  const std::vector<double> g = outer_gradient(model, val, loss);
  for (std::size_t i = 0; i < raw.size(); ++i) {
    const double total = g[i] + l2 * (*raw[i].second)[0];
    if (!std::isfinite(total)) {
      throw TrainingError("non-finite modulator gradient at outer step " + std::to_string(step_index));
    }
    raw[i].second->set_grad({total});
  }
  adam.step(raw);
  for (const auto& [name, p] : raw) p->clear_grad();
  return validation_loss(model, val, loss);
}

double validation_loss(peft::InstrumentedModel& model, const data::Batch& batch,
                       const objective::LossConfig& loss) {
  return objective::la_loss_value(model.logits(batch.x), batch.labels, loss);
}

double balanced_accuracy(peft::InstrumentedModel& model, const data::Batch& batch,
                         std::size_t num_classes) {
  const auto pred = objective::argmax_rows(model.logits(batch.x));
  std::vector<std::size_t> hit(num_classes, 0), total(num_classes, 0);
  for (std::size_t i = 0; i < batch.labels.size(); ++i) {
    ++total[batch.labels[i]];
    hit[batch.labels[i]] += pred[i] == batch.labels[i];
  }
  double sum = 0.0;
  std::size_t present = 0;
  for (std::size_t c = 0; c < num_classes; ++c) {
    if (total[c] == 0) continue;
    sum += static_cast<double>(hit[c]) / static_cast<double>(total[c]);
    ++present;
  }
  return present ? sum / static_cast<double>(present) : 0.0;
}

RunResult run_bilevel(peft::InstrumentedModel& model, const data::LongTailedDataset& train,
                      const MetaSchedule& schedule, std::uint64_t seed, const StepObserver& observer) {
  return train_loop(model, train, schedule, seed, true, observer);
}

RunResult run_finetune(peft::InstrumentedModel& model, const data::LongTailedDataset& train,
                       const MetaSchedule& schedule, std::uint64_t seed, const StepObserver& observer) {
  return train_loop(model, train, schedule, seed, false, observer);
}

objective::MetricsReport evaluate_model(peft::InstrumentedModel& model,
                                        const data::LongTailedDataset& eval,
                                        const data::ClassGroups& groups,
                                        const objective::LossConfig& loss) {
  ad::Tape tape;
  const auto out = model.forward(tape, eval.features, peft::Trainables{false, false, false});
  objective::MetricsReport report =
      objective::build_report(out.logits.value(), out.features.value(), eval.labels, groups, loss);
  if (const peft::Modulator* mod = model.modulator()) report.gamma = mod->gamma_table();
  const peft::ParamCounts counts = model.count_trainable();
  report.params = objective::ParamBlock{counts.tuner, counts.head, counts.modulator};
  return report;
}

}  // namespace mpft::meta
