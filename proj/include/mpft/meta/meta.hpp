#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mpft/autodiff/tensor.hpp"
#include "mpft/data/longtail.hpp"
#include "mpft/objective/objective.hpp"
#include "mpft/peft/peft.hpp"

namespace mpft::meta {

using ParamList = std::vector<std::pair<std::string, ad::Tensor*>>;

/// base_lr * sqrt(batch_size / base_batch).
double scale_lr(double base_lr, std::size_t batch_size, std::size_t base_batch = 128);

/// True iff at least patience + 1 entries exist and each of the last
/// `patience` epoch-over-epoch improvements is below `min_improve`.
bool check_early_stop(std::span<const double> history, double min_improve = 0.003,
                      std::size_t patience = 3);

/// Plain SGD, optionally with heavy-ball momentum. Reads each parameter's
/// gradient slot.
class Sgd {
 public:
  explicit Sgd(double lr, double momentum = 0.0) : lr_(lr), momentum_(momentum) {}

  /// Throws TrainingError naming `step_index` if any gradient is non-finite.
  void step(const ParamList& params, std::size_t step_index);
  double lr() const { return lr_; }

 private:
  double lr_;
  double momentum_;
  std::vector<std::vector<double>> velocity_;
};

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

class Adam {
 public:
  explicit Adam(double lr, AdamConfig cfg = {}) : lr_(lr), cfg_(cfg) {}

  /// Bias-corrected Adam update from each parameter's gradient slot.
  void step(const ParamList& params);
  std::size_t steps() const { return steps_; }
  const std::vector<std::vector<double>>& first_moment() const { return m_; }
  const std::vector<std::vector<double>>& second_moment() const { return v_; }

 private:
  double lr_;
  AdamConfig cfg_;
  std::size_t steps_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

struct EarlyStop {
  bool enabled = true;
  double min_improve = 0.003;
  std::size_t patience = 3;
};

struct MetaSchedule {
  std::size_t inner_steps = 10;  // K
  std::size_t max_epochs = 20;
  double inner_lr = 1e-2;
  double outer_lr = 1e-2;
  std::size_t batch_size = 32;
  /// Apply scale_lr to inner_lr against a base batch of 128.
  bool scale_inner_lr = true;
  double momentum = 0.0;
  double outer_l2 = 1e-4;
  double tau = 1.0;
  AdamConfig adam;
  EarlyStop early_stop;
  data::SamplingStrategy sampler = data::RandomStratified{0.2};

  void validate() const;
  double effective_inner_lr() const;
};

/// Everything the alternation reports back to observers.
struct StepEvent {
  enum class Kind { Inner, Outer, EpochEnd };
  Kind kind = Kind::Inner;
  std::size_t epoch = 0;        // 1-based
  std::size_t inner_step = 0;   // completed inner steps so far
  std::size_t outer_step = 0;   // completed outer steps so far
  double loss = 0.0;            // batch loss for Inner/Outer, val accuracy for EpochEnd
};
using StepObserver = std::function<void(const StepEvent&, const peft::InstrumentedModel&)>;

struct GammaRecord {
  std::size_t outer_index = 0;  // 1-based
  std::size_t inner_step = 0;   // inner steps completed when recorded
  InsertionSite site;
  double gamma = 0.0;
};

struct MetaState {
  std::size_t epoch = 0;
  std::size_t inner_steps = 0;
  std::size_t outer_steps = 0;
  std::vector<double> val_history;
  bool early_stopped = false;
};

struct RunResult {
  MetaState state;
  std::vector<double> train_losses;
  std::vector<GammaRecord> trajectory;
};

/// Batch-loss of one SGD step on the PEFT parameters and head; the modulator
/// enters as a constant.
double inner_step(peft::InstrumentedModel& model, Sgd& sgd, const data::Batch& batch,
                  const objective::LossConfig& loss, std::size_t step_index);

/// First-order gradient of the validation LA loss with respect to the raw
/// modulator parameters, PEFT and head held fixed. Site order.
std::vector<double> outer_gradient(peft::InstrumentedModel& model, const data::Batch& val,
                                   const objective::LossConfig& loss);

/// One Adam step on the raw modulator using outer_gradient + l2 * raw.
double outer_step(peft::InstrumentedModel& model, Adam& adam, const data::Batch& val,
                  const objective::LossConfig& loss, double l2, std::size_t step_index);

/// LA loss of the model on `batch`, without gradient.
double validation_loss(peft::InstrumentedModel& model, const data::Batch& batch,
                       const objective::LossConfig& loss);

/// Epochs over the training set in shuffled batches. After every K inner
/// steps a fresh validation subset is drawn from the training set and the
/// modulator takes one outer step, except at the end of the very first
/// window. Stops at max_epochs or on early stop. Requires Modulated mode.
/// On a training error the model keeps its partial state and the error
/// propagates.
RunResult run_bilevel(peft::InstrumentedModel& model, const data::LongTailedDataset& train,
                      const MetaSchedule& schedule, std::uint64_t seed,
                      const StepObserver& observer = {});

/// Same loop with the outer step disabled: the fixed-scaling baseline.
RunResult run_finetune(peft::InstrumentedModel& model, const data::LongTailedDataset& train,
                       const MetaSchedule& schedule, std::uint64_t seed,
                       const StepObserver& observer = {});

/// Raw-logit evaluation; fills accuracies, loss, distances, gamma table and
/// parameter counts.
objective::MetricsReport evaluate_model(peft::InstrumentedModel& model,
                                        const data::LongTailedDataset& eval,
                                        const data::ClassGroups& groups,
                                        const objective::LossConfig& loss);

/// Mean per-class accuracy of the model on `batch`.
double balanced_accuracy(peft::InstrumentedModel& model, const data::Batch& batch,
                         std::size_t num_classes);

}  // namespace mpft::meta
