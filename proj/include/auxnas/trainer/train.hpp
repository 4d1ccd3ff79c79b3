#pragma once

#include <chrono>
#include <cmath>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "auxnas/archnet/network.hpp"
#include "auxnas/taskgen/dataset.hpp"
#include "auxnas/taskgen/iterate.hpp"
#include "auxnas/trainer/optim.hpp"
#include "auxnas/trainer/report.hpp"
#include "auxnas/trainer/schedule.hpp"

namespace auxnas {

struct TrainConfig {
  std::size_t epochs = 10;
  std::size_t batch_size = 32;
  OptimConfig optim;
  LambdaSchedule schedule;   // total_steps is set from the epoch budget
  bool freeze_alpha_p = false;  // hold alpha_P at 0 (gradients + architecture search ablation)
  bool timing = false;          // record wall time per batch (otherwise 0)
  bool track_validation = true;
  std::uint64_t batching_seed = 0;

  void validate() const {
    if (epochs == 0) throw ConfigError("training.epochs must be >= 1");
    if (batch_size < 2) throw ConfigError("training.batch_size must be >= 2 (batch normalization)");
    optim.validate();
    schedule.validate();
  }
};

inline Var task_loss(Var pred, const Batch& b, std::size_t task, const HeadSpec& head) {
  switch (head.loss) {
    case LossKind::mse:
      return ops::mse(pred, pred.tape().constant(b.targets.at(task)));
    case LossKind::cosine:
      return ops::cosine_loss(pred, pred.tape().constant(b.targets.at(task)));
    case LossKind::cross_entropy:
      return ops::softmax_xent(pred, b.classes.at(task));
  }
  throw ContractViolation("task_loss: unknown loss");
}

struct StepLosses {
  Var primary;
  Var aux;  // sum over auxiliary tasks; constant 0 without any
  ForwardResult out;
};

inline StepLosses compute_losses(AuxNetwork& net, Tape& tape, const Batch& b, NormMode mode) {
  if (b.targets.size() < 1 + net.aux_count()) {
    throw ConfigError("batch carries " + std::to_string(b.targets.size()) + " tasks, network uses " +
                      std::to_string(1 + net.aux_count()));
  }
  StepLosses L;
  L.out = forward(net, tape, b.x, mode);
  L.primary = task_loss(L.out.primary, b, 0, net.primary.head);
  if (L.out.aux.empty()) {
    L.aux = tape.constant(Tensor::scalar(0.0));
  } else {
    for (std::size_t k = 0; k < L.out.aux.size(); ++k) {
      Var l = task_loss(L.out.aux[k], b, k + 1, net.auxiliaries[k].head);
      L.aux = k == 0 ? l : ops::add(L.aux, l);
    }
  }
  return L;
}

/// L^P + L^A + lambda * ||alpha_P||_1. alpha_A is not regularized.
inline Var nas_objective(Var loss_p, Var loss_a, std::span<const Var> alpha_p, double lambda) {
  if (!(lambda >= 0.0)) throw ContractViolation("nas_objective: lambda must be >= 0");
  Var base = ops::add(loss_p, loss_a);
  if (alpha_p.empty()) return base;
  return ops::add(base, ops::mul_scalar(ops::l1_norm(alpha_p, loss_p.tape()), lambda));
}

/// lambda * sum|alpha_P| from stored values, summed in name order.
inline double regularizer(const ParamStore& store, double lambda) {
  double s = 0.0;
  for (const auto& name : store.names_in(ParamGroup::alpha_p)) s += std::abs(store.value(name).item());
  return lambda * s;
}

inline std::vector<std::string> weight_names(const ParamStore& store) {
  return store.names_if([](const std::string&, const ParamEntry& e) { return !is_arch_group(e.group); });
}

/// The dataset provides every task the network trains on, with matching heads.
inline void check_compatible(const AuxNetwork& net, const Dataset& data) {
  if (data.input_dim() != net.input_dim) {
    throw ConfigError("dataset has " + std::to_string(data.input_dim()) + " inputs, network expects " +
                      std::to_string(net.input_dim));
  }
  if (data.tasks.size() < 1 + net.aux_count()) {
    throw ConfigError("dataset has " + std::to_string(data.aux_count()) + " auxiliary tasks, network uses " +
                      std::to_string(net.aux_count()));
  }
  auto same = [](const HeadSpec& a, const HeadSpec& b) {
    return a.kind == b.kind && a.out_dim == b.out_dim && a.loss == b.loss;
  };
  if (!same(data.tasks[0].head, net.primary.head)) throw ConfigError("primary head does not match the dataset");
  for (std::size_t k = 0; k < net.aux_count(); ++k) {
    if (!same(data.tasks[k + 1].head, net.auxiliaries[k].head)) {
      throw ConfigError("auxiliary head " + std::to_string(k) + " does not match the dataset");
    }
  }
}

struct StepOutcome {
  double loss_p = 0.0;
  double loss_a = 0.0;
  std::uint64_t ops = 0;
};

namespace detail {

struct Snapshot {
  ParamStore params;
  std::map<std::string, RunningStats> stats;
};

inline void require_finite_loss(const StepLosses& L, const char* what) {
  const double p = L.primary.value().item(), a = L.aux.value().item();
  if (!std::isfinite(p) || !std::isfinite(a)) throw NonFiniteError(std::string(what) + ": non-finite loss");
}

}  // namespace detail

/// Gradient step on every non-architecture parameter with L^P + L^A;
/// batch normalization runs in train mode and updates its statistics.
inline StepOutcome weight_step(AuxNetwork& net, const Batch& b, OptimState& opt) {
  Tape tape;
  StepLosses L = compute_losses(net, tape, b, NormMode::train);
  detail::require_finite_loss(L, "weight step");
  GradMap g = tape.backward(ops::add(L.primary, L.aux), net.params);
  opt.step_weights(net.params, g, weight_names(net.params));
  return {L.primary.value().item(), L.aux.value().item(), tape.op_count().total()};
}

/// Gradient step on the architecture weights with the full objective.
/// Normalization uses batch statistics without touching running
/// statistics, so a search step leaves every weight-side buffer intact.
inline StepOutcome alpha_step(AuxNetwork& net, const Batch& b, OptimState& opt, double lambda,
                              bool freeze_alpha_p = false) {
  Tape tape;
  StepLosses L = compute_losses(net, tape, b, NormMode::train_frozen);
  detail::require_finite_loss(L, "architecture step");
  const auto ap_names = net.params.names_in(ParamGroup::alpha_p);
  std::vector<Var> ap;
  for (const auto& n : ap_names) ap.push_back(tape.param(net.params, n));
  const bool prox = opt.config().proximal;
  Var obj = prox ? ops::add(L.primary, L.aux) : nas_objective(L.primary, L.aux, ap, lambda);
  GradMap g = tape.backward(obj, net.params);
  std::vector<std::string> names = net.params.names_in(ParamGroup::alpha_a);
  if (!freeze_alpha_p) names.insert(names.end(), ap_names.begin(), ap_names.end());
  opt.step_alphas(net.params, g, names, prox && !freeze_alpha_p ? ap_names : std::vector<std::string>{}, lambda);
  return {L.primary.value().item(), L.aux.value().item(), tape.op_count().total()};
}

/// One alternating search step on two disjoint batches.
inline StepRecord alternate_step(AuxNetwork& net, const Batch& batch_w, const Batch& batch_alpha, OptimState& opt,
                                 double lambda, bool freeze_alpha_p = false) {
  if (net.mode != Mode::aux_nas) throw ContractViolation("alternate_step on a non-search network");
  std::set<std::size_t> rows(batch_w.rows.begin(), batch_w.rows.end());
  for (auto r : batch_alpha.rows) {
    if (rows.count(r)) throw ContractViolation("alternate_step: batches share sample " + std::to_string(r));
  }
  const StepOutcome w = weight_step(net, batch_w, opt);
  const StepOutcome a = alpha_step(net, batch_alpha, opt, lambda, freeze_alpha_p);
  StepRecord s;
  s.loss_p = w.loss_p;
  s.loss_a = w.loss_a;
  s.lambda = lambda;
  s.reg = regularizer(net.params, lambda);
  const AlphaStats sp = alpha_stats(net.params, ParamGroup::alpha_p);
  s.alpha_p_max = sp.max;
  s.alpha_p_mean = sp.mean;
  s.alpha_a_mean = alpha_stats(net.params, ParamGroup::alpha_a).mean;
  s.op_count = w.ops + a.ops;
  return s;
}

/// Primary loss over a whole split with running statistics.
inline double evaluate_primary_loss(const AuxNetwork& net, const Dataset& data, Split split) {
  const auto idx = data.indices(split);
  if (idx.empty()) return 0.0;
  AuxNetwork copy = net;
  Tape tape;
  Batch b = gather(data, idx);
  Var out = forward(copy, tape, b.x, NormMode::eval).primary;
  return task_loss(out, b, 0, net.primary.head).value().item();
}

namespace detail {

inline void finish_epoch(TrainReport& r, const AuxNetwork& net, const Dataset& data, const TrainConfig& cfg,
                         std::size_t epoch, std::size_t first_step) {
  EpochRecord e;
  e.epoch = epoch;
  const std::size_t n = r.steps.size() - first_step;
  for (std::size_t i = first_step; i < r.steps.size(); ++i) {
    e.loss_p += r.steps[i].loss_p;
    e.loss_a += r.steps[i].loss_a;
  }
  if (n) {
    e.loss_p /= static_cast<double>(n);
    e.loss_a /= static_cast<double>(n);
  }
  if (cfg.track_validation) {
    try {
      e.val_loss_p = evaluate_primary_loss(net, data, Split::val);
    } catch (const NonFiniteError& err) {
      throw DivergenceError("diverged at the end of epoch " + std::to_string(epoch) + " (" + err.what() + ")");
    }
  }
  e.alpha_p = alpha_stats(net.params, ParamGroup::alpha_p);
  e.alpha_a = alpha_stats(net.params, ParamGroup::alpha_a);
  r.epochs.push_back(e);
}

inline void finish_report(TrainReport& r, const AuxNetwork& net) {
  r.alpha_snapshot.clear();
  for (const auto& [name, e] : net.params) {
    if (is_arch_group(e.group)) r.alpha_snapshot[name] = e.value.item();
  }
  r.final_lambda = r.steps.empty() ? 0.0 : r.steps.back().lambda;
  r.final_param_hash = net.params.hash_group([](const ParamEntry&) { return true; });
}

inline void require_finite_state(const AuxNetwork& net) {
  for (const auto& [name, e] : net.params) {
    for (double v : e.value.data())
      if (!std::isfinite(v)) throw NonFiniteError("parameter '" + name + "' is not finite");
  }
  for (const auto& [key, s] : net.norm_stats) {
    for (const Tensor* t : {&s.mean, &s.var})
      for (double v : t->data())
        if (!std::isfinite(v)) throw NonFiniteError("running statistics of '" + key + "' are not finite");
  }
}

template <class Fn>
StepRecord guarded(AuxNetwork& net, std::size_t step, Fn&& fn) {
  Snapshot snap{net.params, net.norm_stats};
  try {
    StepRecord r = fn();
    require_finite_state(net);
    return r;
  } catch (const NonFiniteError& e) {
    net.params = std::move(snap.params);
    net.norm_stats = std::move(snap.stats);
    throw DivergenceError("diverged at step " + std::to_string(step) + " (" + e.what() +
                          "); parameters restored to the last good step");
  }
}

inline double elapsed_ms(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace detail

/// Joint gradient training on L^P + sum L^A for networks without
/// architecture weights (single, aux_head, aux_g, symmetric).
inline TrainReport train_joint(AuxNetwork& net, const Dataset& data, const TrainConfig& cfg) {
  cfg.validate();
  check_compatible(net, data);
  if (net.mode == Mode::aux_nas || net.mode == Mode::pruned) {
    throw ContractViolation("train_joint on a " + std::string(to_string(net.mode)) + " network");
  }
  OptimState opt(cfg.optim);
  BatchStream stream = iterate(data.indices(Split::train), cfg.batch_size, cfg.batching_seed, false);
  TrainReport r;
  r.method = std::string(to_string(net.mode));
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const std::size_t first = r.steps.size();
    for (const auto& pair : stream.next_epoch()) {
      const Batch b = gather(data, pair.w);
      const auto t0 = std::chrono::steady_clock::now();
      StepRecord s = detail::guarded(net, step, [&] {
        const StepOutcome o = weight_step(net, b, opt);
        StepRecord rec;
        rec.loss_p = o.loss_p;
        rec.loss_a = o.loss_a;
        rec.op_count = o.ops;
        return rec;
      });
      s.step = step++;
      s.epoch = epoch;
      s.wall_ms = cfg.timing ? detail::elapsed_ms(t0) : 0.0;
      r.steps.push_back(s);
    }
    detail::finish_epoch(r, net, data, cfg, epoch, first);
  }
  detail::finish_report(r, net);
  return r;
}

inline TrainReport train_aux_g(AuxNetwork& net, const Dataset& data, const TrainConfig& cfg) {
  if (net.mode != Mode::aux_g) throw ContractViolation("train_aux_g on a " + std::string(to_string(net.mode)) + " network");
  return train_joint(net, data, cfg);
}

/// Single-phase search: alternating weight and architecture steps on
/// disjoint batches, lambda ramped over the architecture-step budget.
inline TrainReport train_aux_nas(AuxNetwork& net, const Dataset& data, const TrainConfig& cfg) {
  cfg.validate();
  check_compatible(net, data);
  if (net.mode != Mode::aux_nas) {
    throw ContractViolation("train_aux_nas on a " + std::string(to_string(net.mode)) + " network");
  }
  if (cfg.freeze_alpha_p) hard_zero_alpha_p(net);
  OptimState opt(cfg.optim);
  BatchStream stream = iterate(data.indices(Split::train), cfg.batch_size, cfg.batching_seed, true);
  LambdaSchedule schedule = cfg.schedule;
  schedule.total_steps = cfg.epochs * stream.steps_per_epoch();
  TrainReport r;
  r.method = cfg.freeze_alpha_p ? "aux_nas_no_features" : "aux_nas";
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const std::size_t first = r.steps.size();
    for (const auto& pair : stream.next_epoch()) {
      const Batch bw = gather(data, pair.w), ba = gather(data, pair.alpha);
      const double lambda = schedule.at(step);
      const auto t0 = std::chrono::steady_clock::now();
      StepRecord s = detail::guarded(net, step, [&] {
        return alternate_step(net, bw, ba, opt, lambda, cfg.freeze_alpha_p);
      });
      s.step = step++;
      s.epoch = epoch;
      s.wall_ms = cfg.timing ? detail::elapsed_ms(t0) : 0.0;
      r.steps.push_back(s);
    }
    detail::finish_epoch(r, net, data, cfg, epoch, first);
  }
  detail::finish_report(r, net);
  return r;
}

/// Dispatches on the network mode.
inline TrainReport train(AuxNetwork& net, const Dataset& data, const TrainConfig& cfg) {
  return net.mode == Mode::aux_nas ? train_aux_nas(net, data, cfg) : train_joint(net, data, cfg);
}

/// Operation count of one training step (both halves for search
/// networks) on a copy of `net`.
inline std::uint64_t train_step_cost(const AuxNetwork& net, const Batch& b_w, const Batch& b_alpha) {
  AuxNetwork copy = net;
  OptimState opt;
  if (copy.mode == Mode::aux_nas) return alternate_step(copy, b_w, b_alpha, opt, 1.0).op_count;
  return weight_step(copy, b_w, opt).ops;
}

struct ConvergenceCheck {
  bool pass = false;
  double threshold = 0.0;
  AlphaStats alpha_p;
  AlphaStats alpha_a;
};

inline constexpr double kConvergenceThreshold = 0.02;

/// Passes when every final alpha_P is below `threshold`.
inline ConvergenceCheck monitor_convergence(const TrainReport& r, double threshold = kConvergenceThreshold) {
  ConvergenceCheck c;
  c.threshold = threshold;
  c.alpha_p = r.final_stats(ParamGroup::alpha_p);
  c.alpha_a = r.final_stats(ParamGroup::alpha_a);
  c.pass = c.alpha_p.max < threshold;
  return c;
}

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation; 0 for one replicate
};

inline MeanStd mean_std(const std::vector<double>& v) {
  MeanStd m;
  if (v.empty()) return m;
  for (double x : v) m.mean += x;
  m.mean /= static_cast<double>(v.size());
  if (v.size() > 1) {
    double s = 0.0;
    for (double x : v) s += (x - m.mean) * (x - m.mean);
    m.std = std::sqrt(s / static_cast<double>(v.size() - 1));
  }
  return m;
}

struct ReplicateSummary {
  std::size_t runs = 0;
  std::size_t passed = 0;
  std::map<std::string, MeanStd> stats;  // "alpha_p.max", "alpha_a.mean", ...
};

inline ReplicateSummary monitor_convergence(const std::vector<TrainReport>& runs,
                                            double threshold = kConvergenceThreshold) {
  ReplicateSummary out;
  out.runs = runs.size();
  std::map<std::string, std::vector<double>> cols;
  for (const auto& r : runs) {
    const auto c = monitor_convergence(r, threshold);
    out.passed += c.pass ? 1 : 0;
    for (const auto& [prefix, s] : {std::pair{"alpha_p", c.alpha_p}, std::pair{"alpha_a", c.alpha_a}}) {
      cols[std::string(prefix) + ".min"].push_back(s.min);
      cols[std::string(prefix) + ".max"].push_back(s.max);
      cols[std::string(prefix) + ".mean"].push_back(s.mean);
      cols[std::string(prefix) + ".median"].push_back(s.median);
    }
  }
  for (const auto& [k, v] : cols) out.stats[k] = mean_std(v);
  return out;
}

}  // namespace auxnas
