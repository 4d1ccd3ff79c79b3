#pragma once

#include <random>
#include <vector>

#include "auxnas/archnet/network.hpp"

namespace auxnas::testing {

inline Tensor randn(Shape s, Rng& rng, double sd = 1.0) {
  std::normal_distribution<double> d(0.0, sd);
  Tensor t(std::move(s));
  for (double& v : t.data()) v = d(rng);
  return t;
}

inline BranchSpec regression_branch(std::size_t n_layers, std::size_t width, std::size_t out = 1) {
  BranchSpec b;
  b.n_layers = n_layers;
  b.layer_widths.assign(n_layers, width);
  b.head = {HeadKind::regression, out, LossKind::mse};
  return b;
}

inline AuxNetwork make_net(Mode mode, std::size_t K, std::size_t n_layers, std::size_t width,
                           std::uint64_t seed, std::size_t input_dim = 5) {
  BuildOptions opt;
  opt.mode = mode;
  Rng rng(seed);
  std::vector<BranchSpec> aux(mode == Mode::single ? 0 : K, regression_branch(n_layers, width));
  return build(input_dim, regression_branch(n_layers, width), aux, opt, rng);
}

/// Fills every fusion projection and adapter with random values, so
/// cross-task paths carry signal.
inline void randomize_projections(AuxNetwork& net, Rng& rng, double sd = 0.3) {
  for (auto& [name, e] : net.params) {
    if (e.group == ParamGroup::fusion_projection) e.value = randn(e.value.shape(), rng, sd);
  }
}

inline void randomize_alphas(AuxNetwork& net, Rng& rng) {
  std::uniform_real_distribution<double> u(0.1, 0.9);
  for (auto& [name, e] : net.params) {
    if (is_arch_group(e.group)) e.value.fill(u(rng));
  }
}

inline void randomize_norms(AuxNetwork& net, Rng& rng) {
  std::uniform_real_distribution<double> u(0.5, 1.5);
  std::normal_distribution<double> d(0.0, 0.2);
  for (auto& [name, e] : net.params) {
    if (e.group == ParamGroup::norm_affine) e.value.fill(name.ends_with("gamma") ? u(rng) : d(rng));
  }
  for (auto& [key, s] : net.norm_stats) {
    for (double& v : s.mean.data()) v = d(rng);
    for (double& v : s.var.data()) v = u(rng);
  }
}

}  // namespace auxnas::testing
