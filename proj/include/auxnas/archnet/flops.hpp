#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "auxnas/archnet/network.hpp"

namespace auxnas {

/// Symbolic inference cost inputs: N is the single-task cost, M the fusion
/// cost per task pair (or the extra attention cost), K the number of
/// auxiliary tasks.
struct FlopsModel {
  double N = 0.0;
  double M = 0.0;
  double K = 0.0;
};

enum class CostMethod { ours, soft_mtl, hard_attention, adashare_bound };

inline std::string_view to_string(CostMethod m) {
  switch (m) {
    case CostMethod::ours: return "ours";
    case CostMethod::soft_mtl: return "soft_mtl";
    case CostMethod::hard_attention: return "hard_attention";
    case CostMethod::adashare_bound: return "adashare_bound";
  }
  return "?";
}

/// Closed interval; exact costs have lower == upper.
struct CostInterval {
  double lower = 0.0;
  double upper = 0.0;
  bool exact() const { return lower == upper; }
};

inline CostInterval symbolic_flops(const FlopsModel& m, CostMethod method) {
  if (m.N < 0 || m.M < 0 || m.K < 0) {
    throw ContractViolation("symbolic_flops: N, M, K must be non-negative");
  }
  switch (method) {
    case CostMethod::ours:
      return {m.N, m.N};
    case CostMethod::soft_mtl: {
      const double v = (m.K + 1.0) * m.N + (m.K + 1.0) * m.K * m.M / 2.0;
      return {v, v};
    }
    case CostMethod::hard_attention:
      return {m.N + m.M, m.N + m.M};
    case CostMethod::adashare_bound:
      return {0.0, m.N};
  }
  return {};
}

/// Operation counts read off a recorded forward (and optionally backward)
/// pass. Multiply-adds count once; norm and activation count per element.
struct MeasuredFlops {
  std::uint64_t forward = 0;
  std::uint64_t backward = 0;
  std::map<std::string, std::uint64_t> by_kind;

  std::uint64_t kind(const std::string& k) const {
    auto it = by_kind.find(k);
    return it == by_kind.end() ? 0 : it->second;
  }
};

inline MeasuredFlops to_measured(const OpCount& c) {
  return {c.forward, c.backward, c.forward_by_kind};
}

/// Inference cost of `net` as built: every branch the primary output needs
/// in its current mode (all branches for unpruned search networks).
inline MeasuredFlops measure_inference(const AuxNetwork& net, std::size_t batch) {
  AuxNetwork copy = net;
  Tape tape;
  forward(copy, tape, Tensor({batch, net.input_dim}), NormMode::eval);
  return to_measured(tape.op_count());
}

/// Inference cost of the plain single-task network behind `net`'s primary
/// branch.
inline MeasuredFlops measure_single_task(const AuxNetwork& net, std::size_t batch) {
  AuxNetwork copy = net;
  Tape tape;
  forward_single_task(copy, tape, Tensor({batch, net.input_dim}));
  return to_measured(tape.op_count());
}

/// Per-layer element operations a fused primary layer adds on top of the
/// single-task network: four for normalization, one for the activation.
inline std::uint64_t fused_layer_overhead(const AuxNetwork& net, std::size_t batch) {
  std::uint64_t ops = 0;
  for (std::size_t i = 1; i <= net.n_layers(); ++i) {
    if (net.params.contains(layer_key(Owner::primary, i) + "/gamma")) {
      ops += 5ULL * batch * net.primary.width(i);
    }
  }
  return ops;
}

}  // namespace auxnas
