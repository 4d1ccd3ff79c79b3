#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "auxnas/autodiff/tape.hpp"

namespace auxnas {

struct GradCheckResult {
  double max_rel_error = 0.0;
  // Smallest |input| to a kinked op at the unperturbed point.
  double min_kink_distance = 0.0;
  std::size_t coordinates = 0;
};

inline constexpr double kGradCheckEps = 1e-5;

/// Error measure used throughout: |ad - fd| / max(1, |fd|).
inline double grad_rel_error(double ad, double fd) {
  return std::abs(ad - fd) / std::max(1.0, std::abs(fd));
}

/// Compares reverse-mode gradients of a scalar closure against central
/// differences, coordinate by coordinate over every input tensor.
inline GradCheckResult grad_check(
    const std::function<Var(Tape&, const std::vector<Var>&)>& fn, std::vector<Tensor> inputs,
    double eps = kGradCheckEps) {
  if (!(eps > 0.0)) throw ContractViolation("grad_check: eps must be positive");

  auto evaluate = [&](const std::vector<Tensor>& point) {
    Tape tape;
    std::vector<Var> vars;
    for (const auto& t : point) vars.push_back(tape.constant(t));
    const double v = fn(tape, vars).value().item();
    if (!std::isfinite(v)) throw NonFiniteError("grad_check: closure value is not finite");
    return v;
  };

  GradCheckResult res;
  std::vector<Tensor> analytic;
  {
    Tape tape;
    std::vector<Var> vars;
    for (const auto& t : inputs) vars.push_back(tape.variable(t));
    Var root = fn(tape, vars);
    tape.backward(root);
    for (const auto& v : vars) analytic.push_back(tape.grad(v));
    res.min_kink_distance = tape.min_kink_distance();
  }

  for (std::size_t k = 0; k < inputs.size(); ++k) {
    for (std::size_t i = 0; i < inputs[k].numel(); ++i) {
      const double orig = inputs[k][i];
      inputs[k][i] = orig + eps;
      const double up = evaluate(inputs);
      inputs[k][i] = orig - eps;
      const double down = evaluate(inputs);
      inputs[k][i] = orig;
      const double fd = (up - down) / (2.0 * eps);
      const double ad = analytic[k][i];
      if (!std::isfinite(ad)) throw NonFiniteError("grad_check: non-finite analytic gradient");
      res.max_rel_error = std::max(res.max_rel_error, grad_rel_error(ad, fd));
      ++res.coordinates;
    }
  }
  return res;
}

/// Same check with the coordinates drawn from a parameter store. The
/// closure must bind parameters through `tape.param(store, name)`.
inline GradCheckResult grad_check_params(
    const std::function<Var(Tape&, ParamStore&)>& fn, ParamStore& store,
    const std::vector<std::string>& names, double eps = kGradCheckEps) {
  if (!(eps > 0.0)) throw ContractViolation("grad_check: eps must be positive");
  GradCheckResult res;
  GradMap analytic;
  {
    Tape tape;
    Var root = fn(tape, store);
    analytic = tape.backward(root, store);
    res.min_kink_distance = tape.min_kink_distance();
  }
  auto evaluate = [&]() {
    Tape tape;
    const double v = fn(tape, store).value().item();
    if (!std::isfinite(v)) throw NonFiniteError("grad_check: closure value is not finite");
    return v;
  };
  for (const auto& name : names) {
    Tensor& t = store.value(name);
    for (std::size_t i = 0; i < t.numel(); ++i) {
      const double orig = t[i];
      t[i] = orig + eps;
      const double up = evaluate();
      t[i] = orig - eps;
      const double down = evaluate();
      t[i] = orig;
      const double fd = (up - down) / (2.0 * eps);
      const double ad = analytic.at(name)[i];
      if (!std::isfinite(ad)) throw NonFiniteError("grad_check: non-finite analytic gradient");
      res.max_rel_error = std::max(res.max_rel_error, grad_rel_error(ad, fd));
      ++res.coordinates;
    }
  }
  return res;
}

}  // namespace auxnas
