#pragma once

#include <cmath>
#include <map>
#include <span>
#include <string>

#include "auxnas/archnet/spec.hpp"
#include "auxnas/tensor.hpp"

namespace auxnas {

using MetricMap = std::map<std::string, double>;

/// Fraction of rows whose argmax (first maximum on ties) equals the label.
inline double accuracy(const Tensor& logits, std::span<const int> labels) {
  if (logits.rank() != 2 || logits.rows() != labels.size()) {
    throw DimensionError("accuracy: logits " + shape_str(logits.shape()) + " for " + std::to_string(labels.size()) +
                         " labels");
  }
  if (labels.empty()) throw ContractViolation("accuracy: empty evaluation set");
  std::size_t hits = 0;
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < logits.cols(); ++c)
      if (logits(r, c) > logits(r, best)) best = c;
    if (static_cast<int>(best) == labels[r]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(labels.size());
}

inline double mse(const Tensor& pred, const Tensor& target) {
  if (pred.shape() != target.shape()) {
    throw DimensionError("mse: " + shape_str(pred.shape()) + " vs " + shape_str(target.shape()));
  }
  if (pred.numel() == 0) throw ContractViolation("mse: empty evaluation set");
  double s = 0.0;
  for (std::size_t i = 0; i < pred.numel(); ++i) s += (pred[i] - target[i]) * (pred[i] - target[i]);
  return s / static_cast<double>(pred.numel());
}

inline double rmse(const Tensor& pred, const Tensor& target) { return std::sqrt(mse(pred, target)); }

/// Regression: mse, rmse. Classification: accuracy.
inline MetricMap metrics(const Tensor& pred, const Tensor& labels, const HeadSpec& head) {
  if (head.kind == HeadKind::classification) {
    if (labels.rank() != 2 || labels.cols() != 1) {
      throw DimensionError("metrics: class labels must be one column, got " + shape_str(labels.shape()));
    }
    std::vector<int> cls(labels.rows());
    for (std::size_t r = 0; r < cls.size(); ++r) cls[r] = static_cast<int>(labels(r, 0));
    return {{"accuracy", accuracy(pred, cls)}};
  }
  const double m = mse(pred, labels);
  return {{"mse", m}, {"rmse", std::sqrt(m)}};
}

/// The metric a method comparison is ranked by, and whether lower is better.
inline std::pair<std::string, bool> primary_metric(const HeadSpec& head) {
  return head.kind == HeadKind::classification ? std::pair{std::string("accuracy"), false}
                                               : std::pair{std::string("mse"), true};
}

}  // namespace auxnas
