#pragma once

#include <chrono>
#include <vector>

#include "auxnas/archnet/flops.hpp"
#include "auxnas/evalbench/protocol.hpp"

namespace auxnas {

struct ScalingPoint {
  std::size_t K = 0;
  std::size_t branch_weights = 0;  // |w|: trainable values of the primary branch
  std::size_t alpha_count = 0;     // all architecture weights
  std::uint64_t step_ops = 0;      // forward + backward of one alternating step
  double wall_ms = 0.0;            // mean over the timed steps, 0 if untimed
  std::uint64_t pruned_inference_ops = 0;
};

/// cost ~ a (K+1)|w| + b K|alpha|, where K|alpha| is the total
/// architecture-weight count.
struct ScalingFit {
  double a = 0.0;
  double b = 0.0;
  double r2 = 0.0;
};

struct ScalingStudy {
  std::vector<ScalingPoint> points;
  ScalingFit fit;

  const ScalingPoint& at(std::size_t K) const {
    for (const auto& p : points)
      if (p.K == K) return p;
    throw ContractViolation("scaling study has no point for K = " + std::to_string(K));
  }
  double op_ratio(std::size_t k_num, std::size_t k_den) const {
    return static_cast<double>(at(k_num).step_ops) / static_cast<double>(at(k_den).step_ops);
  }
};

/// Least squares without intercept on two regressors; R^2 against the
/// mean of y.
inline ScalingFit fit_cost(const std::vector<double>& x1, const std::vector<double>& x2, const std::vector<double>& y) {
  if (x1.size() != y.size() || x2.size() != y.size() || y.size() < 2) {
    throw ContractViolation("fit_cost: needs at least 2 matching observations");
  }
  double s11 = 0, s12 = 0, s22 = 0, s1y = 0, s2y = 0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    s11 += x1[i] * x1[i];
    s12 += x1[i] * x2[i];
    s22 += x2[i] * x2[i];
    s1y += x1[i] * y[i];
    s2y += x2[i] * y[i];
  }
  const double det = s11 * s22 - s12 * s12;
  ScalingFit f;
  if (std::abs(det) <= 1e-12 * s11 * s22) {
    f.a = s1y / s11;
  } else {
    f.a = (s22 * s1y - s12 * s2y) / det;
    f.b = (s11 * s2y - s12 * s1y) / det;
  }
  double mean = 0;
  for (double v : y) mean += v;
  mean /= static_cast<double>(y.size());
  double ss_res = 0, ss_tot = 0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double e = y[i] - (f.a * x1[i] + f.b * x2[i]);
    ss_res += e * e;
    ss_tot += (y[i] - mean) * (y[i] - mean);
  }
  f.r2 = ss_tot > 0 ? 1.0 - ss_res / ss_tot : (ss_res == 0 ? 1.0 : 0.0);
  return f;
}

/// Per-K training-step cost of the search network and the cost of its
/// pruned inference network, on a fixed synthetic batch.
inline ScalingStudy scaling_study(const std::vector<std::size_t>& Ks, ArchConfig arch, std::size_t input_dim = 16,
                                  std::size_t batch = 32, std::uint64_t seed = 0, std::size_t timed_steps = 0) {
  if (Ks.empty()) throw ConfigError("scaling study needs at least one K");
  const std::size_t k_max = *std::max_element(Ks.begin(), Ks.end());
  if (k_max == 0) throw ConfigError("scaling study needs K >= 1");
  TaskDef t{"", {HeadKind::regression, 1, LossKind::mse}, 0.1, 0.0};
  const Dataset data = generate(make_family(input_dim, 0.9, std::vector<TaskDef>(k_max + 1, t), seed),
                                std::max<std::size_t>(30, 2 * batch), seed);
  std::vector<std::size_t> w_rows(batch), a_rows(batch);
  for (std::size_t i = 0; i < batch; ++i) {
    w_rows[i] = i;
    a_rows[i] = batch + i;
  }
  const Batch bw = gather(data, w_rows), ba = gather(data, a_rows);
  ScalingStudy s;
  for (auto K : Ks) {
    if (K == 0) throw ConfigError("scaling study needs K >= 1");
    arch.aux_tasks = K;
    const AuxNetwork net = build_for(Method::aux_nas, arch, data, seed);
    ScalingPoint p;
    p.K = K;
    p.branch_weights = net.params.count_values(
        [](const std::string&, const ParamEntry& e) { return e.owner == Owner::primary && !is_arch_group(e.group); });
    p.alpha_count = net.params.count_values([](const std::string&, const ParamEntry& e) { return is_arch_group(e.group); });
    p.step_ops = train_step_cost(net, bw, ba);
    if (timed_steps > 0) {
      AuxNetwork copy = net;
      OptimState opt;
      const auto t0 = std::chrono::steady_clock::now();
      for (std::size_t i = 0; i < timed_steps; ++i) alternate_step(copy, bw, ba, opt, 1.0);
      p.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count() /
                  static_cast<double>(timed_steps);
    }
    p.pruned_inference_ops = measure_inference(prune(net), batch).forward;
    s.points.push_back(p);
  }
  std::vector<double> x1, x2, y;
  for (const auto& p : s.points) {
    x1.push_back(static_cast<double>((p.K + 1) * p.branch_weights));
    x2.push_back(static_cast<double>(p.alpha_count));
    y.push_back(static_cast<double>(p.step_ops));
  }
  if (s.points.size() >= 2) s.fit = fit_cost(x1, x2, y);
  return s;
}

}  // namespace auxnas
