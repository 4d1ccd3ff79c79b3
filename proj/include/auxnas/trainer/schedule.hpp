#pragma once

#include <algorithm>
#include <string>

#include "auxnas/errors.hpp"

namespace auxnas {

enum class RampShape { linear, quadratic };

inline std::string_view to_string(RampShape s) { return s == RampShape::linear ? "linear" : "quadratic"; }

inline RampShape ramp_shape_from_string(std::string_view s) {
  if (s == "linear") return RampShape::linear;
  if (s == "quadratic") return RampShape::quadratic;
  throw ConfigError("unknown ramp shape '" + std::string(s) + "'");
}

/// Regularization weight over the architecture-step budget: lambda(0) =
/// start and lambda(total_steps - 1) = end.
struct LambdaSchedule {
  RampShape shape = RampShape::linear;
  double start = 0.0;
  double end = 100.0;
  std::size_t total_steps = 1;

  void validate() const {
    if (!(start >= 0.0) || !(end >= start)) throw ConfigError("lambda schedule needs 0 <= start <= end");
  }

  double at(std::size_t step) const {
    if (total_steps <= 1) return step == 0 ? start : end;
    const double t = static_cast<double>(std::min(step, total_steps - 1)) / static_cast<double>(total_steps - 1);
    const double f = shape == RampShape::linear ? t : t * t;
    return start + (end - start) * f;
  }
};

inline LambdaSchedule constant_lambda(double value, std::size_t total_steps) {
  return {RampShape::linear, value, value, total_steps};
}

}  // namespace auxnas
