#include <cmath>
#include <numeric>

#include "mpft/errors.hpp"
#include "mpft/objective/objective.hpp"

namespace mpft::objective {

void LossConfig::validate() const {
  if (!(tau >= 0.0)) throw ConfigError("loss.tau must be non-negative");
  if (priors.empty()) throw ConfigError("loss priors are empty");
  double total = 0.0;
  for (double p : priors) {
    if (!(p > 0.0)) throw ConfigError("loss priors must be strictly positive");
    total += p;
  }
  if (std::abs(total - 1.0) > 1e-12) throw ConfigError("loss priors must sum to 1");
}

ad::Tensor LossConfig::adjustment() const {
  std::vector<double> shift;
  shift.reserve(priors.size());
  for (double p : priors) shift.push_back(tau * std::log(p));
  return ad::Tensor::vector(std::move(shift));
}

ad::Var la_loss(ad::Var logits, std::span<const std::size_t> labels, const LossConfig& cfg) {
  cfg.validate();
  if (logits.shape().size() != 2 || logits.shape()[1] != cfg.priors.size()) {
    throw DimensionError("la_loss logits " + ad::shape_str(logits.shape()) + " do not match " +
                         std::to_string(cfg.priors.size()) + " priors");
  }
  ad::Var adjusted = ad::add_row(logits, logits.tape().constant(cfg.adjustment()));
  return ad::softmax_cross_entropy(adjusted, labels);
}

double la_loss_value(const ad::Tensor& logits, std::span<const std::size_t> labels,
                     const LossConfig& cfg) {
  ad::Tape tape;
  return la_loss(tape.constant(logits), labels, cfg).value().item();
}

std::vector<std::size_t> argmax_rows(const ad::Tensor& scores) {
  if (scores.rank() != 2) throw DimensionError("argmax_rows needs a matrix");
  const std::size_t rows = scores.dim(0), cols = scores.dim(1);
  std::vector<std::size_t> out(rows, 0);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 1; c < cols; ++c) {
      if (scores[r * cols + c] > scores[r * cols + out[r]]) out[r] = c;
    }
  }
  return out;
}

}  // namespace mpft::objective
