#include <cmath>

#include "mpft/errors.hpp"
#include "mpft/meta/meta.hpp"

namespace mpft::meta {

double scale_lr(double base_lr, std::size_t batch_size, std::size_t base_batch) {
  if (batch_size < 1 || base_batch < 1) throw ConfigError("scale_lr needs positive batch sizes");
  return base_lr * std::sqrt(static_cast<double>(batch_size) / static_cast<double>(base_batch));
}

bool check_early_stop(std::span<const double> history, double min_improve, std::size_t patience) {
  if (patience == 0 || history.size() < patience + 1) return false;
  const std::size_t n = history.size();
  for (std::size_t i = n - patience; i < n; ++i) {
    if (!(history[i] - history[i - 1] < min_improve)) return false;
  }
  return true;
}

void Sgd::step(const ParamList& params, std::size_t step_index) {
  for (const auto& [name, p] : params) {
    if (!p->has_grad()) continue;
    for (double g : p->grad()) {
      if (!std::isfinite(g)) {
        throw TrainingError("non-finite gradient for " + name + " at inner step " +
                            std::to_string(step_index));
      }
    }
  }
  if (momentum_ != 0.0 && velocity_.size() != params.size()) {
    velocity_.assign(params.size(), {});
    for (std::size_t i = 0; i < params.size(); ++i) velocity_[i].assign(params[i].second->size(), 0.0);
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    ad::Tensor* p = params[i].second;
    if (!p->has_grad()) continue;
    auto w = p->mutable_data();
    auto g = p->grad();
    if (momentum_ != 0.0) {
      auto& vel = velocity_[i];
      for (std::size_t k = 0; k < w.size(); ++k) {
        vel[k] = momentum_ * vel[k] + g[k];
        w[k] -= lr_ * vel[k];
      }
    } else {
      for (std::size_t k = 0; k < w.size(); ++k) w[k] -= lr_ * g[k];
    }
  }
}

void Adam::step(const ParamList& params) {
  for (const auto& [name, p] : params) {
    for (double g : p->grad()) {
      if (!std::isfinite(g)) {
        throw TrainingError("non-finite gradient for " + name + " at outer step " +
                            std::to_string(steps_ + 1));
      }
    }
  }
  if (m_.size() != params.size()) {
    m_.assign(params.size(), {});
    v_.assign(params.size(), {});
    for (std::size_t i = 0; i < params.size(); ++i) {
      m_[i].assign(params[i].second->size(), 0.0);
      v_[i].assign(params[i].second->size(), 0.0);
    }
  }
  ++steps_;
  const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(steps_));
  const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(steps_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    ad::Tensor* p = params[i].second;
    auto w = p->mutable_data();
    auto g = p->grad();
    for (std::size_t k = 0; k < w.size(); ++k) {
      m_[i][k] = cfg_.beta1 * m_[i][k] + (1.0 - cfg_.beta1) * g[k];
      v_[i][k] = cfg_.beta2 * v_[i][k] + (1.0 - cfg_.beta2) * g[k] * g[k];
      const double mhat = m_[i][k] / c1;
      const double vhat = v_[i][k] / c2;
      w[k] -= lr_ * mhat / (std::sqrt(vhat) + cfg_.eps);
    }
  }
}

}  // namespace mpft::meta
