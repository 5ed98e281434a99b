#include <algorithm>
#include <cmath>

#include "mpft/errors.hpp"
#include "mpft/objective/objective.hpp"

namespace mpft::objective {

GroupAccuracies group_accuracies(std::span<const std::size_t> predictions,
                                 std::span<const std::size_t> labels,
                                 const data::ClassGroups& groups, std::size_t num_classes) {
  if (predictions.size() != labels.size()) {
    throw ContractError("group_accuracies: " + std::to_string(predictions.size()) +
                        " predictions for " + std::to_string(labels.size()) + " labels");
  }
  std::vector<std::size_t> hit(num_classes, 0), total(num_classes, 0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= num_classes) throw IndexError("label " + std::to_string(labels[i]) + " out of range");
    ++total[labels[i]];
    if (predictions[i] == labels[i]) ++hit[labels[i]];
  }

  GroupAccuracies out;
  out.per_class.resize(num_classes);
  for (std::size_t c = 0; c < num_classes; ++c) {
    if (total[c] > 0) out.per_class[c] = static_cast<double>(hit[c]) / static_cast<double>(total[c]);
  }

  auto macro = [&](const std::vector<std::size_t>& members) -> std::optional<double> {
    double sum = 0.0;
    std::size_t n = 0;
    for (std::size_t c : members) {
      if (c < num_classes && out.per_class[c]) {
        sum += *out.per_class[c];
        ++n;
      }
    }
    if (n == 0) return std::nullopt;
    return sum / static_cast<double>(n);
  };
  out.head = macro(groups.head);
  out.medium = macro(groups.medium);
  out.tail = macro(groups.tail);

  double sum = 0.0;
  int present = 0;
  for (const auto& g : {out.head, out.medium, out.tail}) {
    if (g) {
      sum += *g;
      ++present;
    }
  }
  out.overall = present ? sum / present : 0.0;
  return out;
}

CosineDistance inter_class_cosine(const ad::Tensor& features, std::span<const std::size_t> labels,
                                  std::span<const std::size_t> classes) {
  if (features.rank() != 2 || features.dim(0) != labels.size()) {
    throw DimensionError("inter_class_cosine: features " + ad::shape_str(features.shape()) +
                         " vs " + std::to_string(labels.size()) + " labels");
  }
  if (classes.size() < 2) throw ContractError("inter_class_cosine needs at least two classes");
  const std::size_t dim = features.dim(1);

  std::vector<std::vector<double>> means;
  for (std::size_t c : classes) {
    std::vector<double> mu(dim, 0.0);
    std::size_t n = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (labels[i] != c) continue;
      for (std::size_t k = 0; k < dim; ++k) mu[k] += features[i * dim + k];
      ++n;
    }
    if (n == 0) throw ContractError("inter_class_cosine: class " + std::to_string(c) + " has no features");
    for (double& v : mu) v /= static_cast<double>(n);
    means.push_back(std::move(mu));
  }

  CosineDistance out;
  double sum = 0.0;
  for (std::size_t i = 0; i < means.size(); ++i) {
    for (std::size_t j = i + 1; j < means.size(); ++j) {
      double dot = 0.0, ni = 0.0, nj = 0.0;
      for (std::size_t k = 0; k < dim; ++k) {
        dot += means[i][k] * means[j][k];
        ni += means[i][k] * means[i][k];
        nj += means[j][k] * means[j][k];
      }
      if (ni == 0.0 || nj == 0.0) {
        ++out.skipped;
        continue;
      }
      double cos = dot / (std::sqrt(ni) * std::sqrt(nj));
      cos = std::clamp(cos, -1.0, 1.0);
      sum += 1.0 - cos;
      ++out.pairs;
    }
  }
  out.mean = out.pairs ? sum / static_cast<double>(out.pairs) : 0.0;
  return out;
}

std::vector<std::size_t> tte_average(std::span<const ad::Tensor> logit_sets) {
  if (logit_sets.empty()) throw ContractError("tte_average needs at least one run");
  const ad::Shape& shape = logit_sets.front().shape();
  if (shape.size() != 2) throw ContractError("tte_average expects [N x C] logits");
  for (const ad::Tensor& t : logit_sets) {
    if (t.shape() != shape) {
      throw ContractError("tte_average shape mismatch: " + ad::shape_str(shape) + " vs " +
                          ad::shape_str(t.shape()));
    }
  }
  const std::size_t rows = shape[0], cols = shape[1];
  std::vector<double> mean(rows * cols, 0.0);
  for (const ad::Tensor& t : logit_sets) {
    for (std::size_t r = 0; r < rows; ++r) {
      double mx = t[r * cols];
      for (std::size_t c = 1; c < cols; ++c) mx = std::max(mx, t[r * cols + c]);
      double z = 0.0;
      for (std::size_t c = 0; c < cols; ++c) z += std::exp(t[r * cols + c] - mx);
      for (std::size_t c = 0; c < cols; ++c) mean[r * cols + c] += std::exp(t[r * cols + c] - mx) / z;
    }
  }
  for (double& v : mean) v /= static_cast<double>(logit_sets.size());
  return argmax_rows(ad::Tensor({rows, cols}, std::move(mean)));
}

MetricsReport build_report(const ad::Tensor& logits, const ad::Tensor& features,
                           std::span<const std::size_t> labels, const data::ClassGroups& groups,
                           const LossConfig& loss) {
  MetricsReport report;
  const std::size_t num_classes = loss.priors.size();
  const auto predictions = argmax_rows(logits);
  report.accuracies = group_accuracies(predictions, labels, groups, num_classes);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) hits += predictions[i] == labels[i];
  report.micro_accuracy = labels.empty() ? 0.0 : static_cast<double>(hits) / labels.size();
  report.la_loss = la_loss_value(logits, labels, loss);

  auto distance = [&](const std::vector<std::size_t>& members) -> std::optional<CosineDistance> {
    std::vector<std::size_t> present;
    for (std::size_t c : members) {
      for (std::size_t l : labels) {
        if (l == c) {
          present.push_back(c);
          break;
        }
      }
    }
    if (present.size() < 2) return std::nullopt;
    return inter_class_cosine(features, labels, present);
  };
  report.head_distance = distance(groups.head);
  report.tail_distance = distance(groups.tail);
  return report;
}

}  // namespace mpft::objective
