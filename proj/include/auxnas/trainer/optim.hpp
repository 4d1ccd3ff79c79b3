#pragma once

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "auxnas/autodiff/param_store.hpp"

namespace auxnas {

enum class OptimKind { sgd_momentum, adam };

inline std::string_view to_string(OptimKind k) { return k == OptimKind::adam ? "adam" : "sgd_momentum"; }

inline OptimKind optim_kind_from_string(std::string_view s) {
  if (s == "sgd_momentum" || s == "sgd") return OptimKind::sgd_momentum;
  if (s == "adam") return OptimKind::adam;
  throw ConfigError("unknown optimizer '" + std::string(s) + "'");
}

struct OptimConfig {
  OptimKind kind = OptimKind::sgd_momentum;
  double lr_w = 1e-2;
  double lr_alpha = 1e-2;
  double momentum = 0.9;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  bool proximal = false;  // soft-threshold the L1 term instead of a subgradient step

  void validate() const {
    if (!(lr_w >= 0.0) || !(lr_alpha >= 0.0)) throw ConfigError("learning rates must be >= 0");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must lie in [0, 1)");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
      throw ConfigError("adam betas must lie in [0, 1)");
    }
    if (!(adam_eps > 0.0)) throw ConfigError("adam_eps must be positive");
  }
};

/// Optimizer state. Weights use SGD with momentum or Adam; architecture
/// weights always use plain SGD followed by the [0, 1] clamp. The two
/// groups keep separate accumulators.
class OptimState {
 public:
  explicit OptimState(OptimConfig cfg = {}) : cfg_(cfg) { cfg_.validate(); }

  const OptimConfig& config() const { return cfg_; }

  void step_weights(ParamStore& store, const GradMap& grads, const std::vector<std::string>& names) {
    ++t_;
    for (const auto& name : names) {
      if (is_arch_group(store.entry(name).group)) {
        throw ContractViolation("step_weights: '" + name + "' is an architecture weight");
      }
      Tensor& p = store.value(name);
      const Tensor& g = grads.at(name);
      if (g.shape() != p.shape()) throw DimensionError("step_weights: gradient shape for '" + name + "'");
      if (cfg_.kind == OptimKind::sgd_momentum) {
        Tensor& v = accumulator(velocity_, name, p);
        for (std::size_t i = 0; i < p.numel(); ++i) {
          v[i] = cfg_.momentum * v[i] + g[i];
          p[i] -= cfg_.lr_w * v[i];
        }
      } else {
        Tensor& m = accumulator(m_, name, p);
        Tensor& s = accumulator(v_, name, p);
        const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
        const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
        for (std::size_t i = 0; i < p.numel(); ++i) {
          m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g[i];
          s[i] = cfg_.beta2 * s[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
          p[i] -= cfg_.lr_w * (m[i] / c1) / (std::sqrt(s[i] / c2) + cfg_.adam_eps);
        }
      }
    }
  }

  /// Plain SGD on architecture weights, then clamp to [0, 1]. With
  /// `l1_threshold` > 0 the entries named in `shrink` are soft-thresholded
  /// by lr_alpha * l1_threshold after the gradient step.
  void step_alphas(ParamStore& store, const GradMap& grads, const std::vector<std::string>& names,
                   const std::vector<std::string>& shrink = {}, double l1_threshold = 0.0) {
    for (const auto& name : names) {
      if (!is_arch_group(store.entry(name).group)) {
        throw ContractViolation("step_alphas: '" + name + "' is not an architecture weight");
      }
      Tensor& p = store.value(name);
      const Tensor& g = grads.at(name);
      for (std::size_t i = 0; i < p.numel(); ++i) p[i] -= cfg_.lr_alpha * g[i];
    }
    const double tau = cfg_.lr_alpha * l1_threshold;
    for (const auto& name : shrink) {
      for (double& v : store.value(name).data()) {
        v = v > tau ? v - tau : (v < -tau ? v + tau : 0.0);
      }
    }
    for (const auto& name : names) {
      for (double& v : store.value(name).data()) v = std::clamp(v, 0.0, 1.0);
    }
  }

  /// Every accumulator has the shape of its parameter.
  bool consistent_with(const ParamStore& store) const {
    for (const auto* acc : {&velocity_, &m_, &v_}) {
      for (const auto& [name, t] : *acc) {
        if (!store.contains(name) || store.value(name).shape() != t.shape()) return false;
      }
    }
    return true;
  }

  std::size_t accumulator_count() const { return velocity_.size() + m_.size() + v_.size(); }

 private:
  static Tensor& accumulator(std::map<std::string, Tensor>& acc, const std::string& name, const Tensor& like) {
    auto it = acc.find(name);
    if (it == acc.end()) it = acc.emplace(name, Tensor::zeros_like(like)).first;
    return it->second;
  }

  OptimConfig cfg_;
  std::map<std::string, Tensor> velocity_, m_, v_;
  std::size_t t_ = 0;
};

}  // namespace auxnas
