#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <queue>
#include <set>
#include <span>
#include <string>
#include <tuple>
#include <vector>

#include "auxnas/archnet/spec.hpp"
#include "auxnas/autodiff/ops.hpp"
#include "auxnas/autodiff/param_store.hpp"
#include "auxnas/autodiff/tape.hpp"
#include "auxnas/util/rng.hpp"

namespace auxnas {

using ops::NormMode;
using ops::RunningStats;

enum class NormKind { batch, identity };
enum class ActivationKind { relu, identity };

/// Bound variables of one fusion layer:
///   Activ(Norm(dest_prev + Projection(concat(alpha_k * src_k)))).
/// The projection has no bias, so a zero concatenation contributes exactly
/// zero.
struct FusionOp {
  std::optional<Var> projection;
  Var gamma;
  Var beta;
  RunningStats* stats = nullptr;
  NormKind norm = NormKind::batch;
  ActivationKind activation = ActivationKind::relu;
};

struct FuseSource {
  Var feature;
  std::optional<Var> alpha;    // architecture weight; absent for a fixed indicator
  std::optional<Var> adapter;  // bias-free width adapter
};

inline Var fuse(Var dest_prev, std::span<const FuseSource> sources, const FusionOp& op,
                NormMode mode) {
  Var sum = dest_prev;
  if (!sources.empty() && op.projection) {
    std::vector<Var> parts;
    parts.reserve(sources.size());
    for (const auto& s : sources) {
      Var f = s.alpha ? ops::scale(s.feature, *s.alpha) : s.feature;
      if (s.adapter) f = ops::linear(f, *s.adapter, std::nullopt, "adapter");
      parts.push_back(f);
    }
    Var cat = ops::concat(std::span<const Var>(parts));
    Var proj = ops::linear(cat, *op.projection, std::nullopt, "projection");
    sum = ops::add(dest_prev, proj, "fusion_add");
  }
  Var normed = sum;
  if (op.norm == NormKind::batch) {
    if (!op.stats) throw ContractViolation("fuse: batch norm without running statistics");
    normed = ops::batchnorm(sum, op.gamma, op.beta, mode, *op.stats);
  }
  return op.activation == ActivationKind::relu ? ops::relu(normed) : normed;
}

struct BuildOptions {
  Mode mode = Mode::aux_nas;
  std::size_t window = 3;
  Granularity granularity = Granularity::layer;
  std::size_t stage_size = 2;
  bool width_adapters = false;
  double alpha_init = 0.5;
};

inline std::string branch_prefix(int owner) {
  return owner == Owner::primary ? "pri" : "aux" + std::to_string(owner);
}

inline std::string layer_key(int owner, std::size_t layer) {
  return branch_prefix(owner) + "/layer" + std::to_string(layer);
}

/// Primary branch, K auxiliary branches (or heads), cross-task connections,
/// and all parameters and normalization buffers.
struct AuxNetwork {
  Mode mode = Mode::single;
  std::size_t input_dim = 0;
  BranchSpec primary;
  std::vector<BranchSpec> auxiliaries;
  BuildOptions options;
  std::vector<Connection> connections;
  ParamStore params;
  std::map<std::string, RunningStats> norm_stats;

  std::size_t aux_count() const { return auxiliaries.size(); }
  std::size_t n_layers() const { return primary.n_layers; }

  /// Modes that carry full auxiliary branches (as opposed to heads only).
  bool has_aux_branches() const {
    return mode == Mode::symmetric || mode == Mode::aux_g || mode == Mode::aux_nas;
  }

  const BranchSpec& branch(int owner) const {
    return owner == Owner::primary ? primary : auxiliaries.at(static_cast<std::size_t>(owner));
  }

  /// Connections feeding layer `layer` of branch `owner`, ordered by
  /// (aux task, source layer); this is the concatenation order.
  std::vector<Connection> incoming(int owner, std::size_t layer) const {
    std::vector<Connection> out;
    for (const auto& c : connections) {
      if (c.dst_layer != layer) continue;
      if (owner == Owner::primary && c.direction == Direction::aux_to_pri) out.push_back(c);
      if (owner != Owner::primary && c.direction == Direction::pri_to_aux &&
          c.aux_task == static_cast<std::size_t>(owner)) {
        out.push_back(c);
      }
    }
    std::sort(out.begin(), out.end(), [](const Connection& a, const Connection& b) {
      return std::tie(a.aux_task, a.src_layer) < std::tie(b.aux_task, b.src_layer);
    });
    return out;
  }

  std::size_t source_width(const Connection& c) const {
    return c.direction == Direction::aux_to_pri ? auxiliaries.at(c.aux_task).width(c.src_layer)
                                                : primary.width(c.src_layer);
  }

  std::vector<std::string> alpha_names(ParamGroup g) const { return params.names_in(g); }
};

namespace detail {

inline Tensor he_normal(std::size_t fan_in, std::size_t fan_out, double gain, Rng& rng) {
  std::normal_distribution<double> dist(0.0, gain / std::sqrt(static_cast<double>(fan_in)));
  Tensor w({fan_in, fan_out});
  for (double& v : w.data()) v = dist(rng);
  return w;
}

inline void add_branch(AuxNetwork& net, int owner, const BranchSpec& spec, Rng& rng) {
  const std::string p = branch_prefix(owner);
  const ParamGroup g = owner == Owner::primary ? ParamGroup::primary_weights : ParamGroup::aux_weights;
  const double relu_gain = std::sqrt(2.0);
  net.params.add(p + "/stem/w", g, owner, he_normal(net.input_dim, spec.width(0), relu_gain, rng));
  net.params.add(p + "/stem/b", g, owner, Tensor({spec.width(0)}));
  for (std::size_t i = 1; i <= spec.n_layers; ++i) {
    const std::string l = layer_key(owner, i);
    net.params.add(l + "/w", g, owner, he_normal(spec.width(i - 1), spec.width(i), relu_gain, rng));
    net.params.add(l + "/b", g, owner, Tensor({spec.width(i)}));
    net.params.add(l + "/gamma", ParamGroup::norm_affine, owner, Tensor::scalar(1.0));
    net.params.add(l + "/beta", ParamGroup::norm_affine, owner, Tensor::scalar(0.0));
    net.norm_stats.emplace(l, RunningStats::identity(spec.width(i)));
  }
  net.params.add(p + "/head/w", g, owner,
                 he_normal(spec.width(spec.n_layers), spec.head.out_dim, 1.0, rng));
  net.params.add(p + "/head/b", g, owner, Tensor({spec.head.out_dim}));
}

inline std::string adapter_name(int owner, std::size_t layer, const Connection& c) {
  const std::string src = c.direction == Direction::aux_to_pri
                              ? branch_prefix(static_cast<int>(c.aux_task))
                              : branch_prefix(Owner::primary);
  return layer_key(owner, layer) + "/adapt/" + src + "_" + std::to_string(c.src_layer);
}

inline std::size_t window_start(std::size_t dst, std::size_t window) {
  return dst > window ? dst - window : 0;
}

inline std::string alpha_name(Direction d, std::size_t k, std::size_t j, std::size_t i) {
  return std::string(d == Direction::aux_to_pri ? "alpha_p" : "alpha_a") + "/aux" +
         std::to_string(k) + "/" + std::to_string(j) + "_" + std::to_string(i);
}

inline std::vector<Connection> make_connections(const AuxNetwork& net) {
  std::vector<Connection> out;
  const std::size_t n = net.n_layers(), K = net.aux_count(), W = net.options.window;
  switch (net.mode) {
    case Mode::aux_nas:
      for (std::size_t i = 1; i <= n; ++i)
        for (std::size_t k = 0; k < K; ++k)
          for (std::size_t j = window_start(i, W); j < i; ++j) {
            out.push_back({Direction::aux_to_pri, k, j, i, alpha_name(Direction::aux_to_pri, k, j, i)});
            out.push_back({Direction::pri_to_aux, k, j, i, alpha_name(Direction::pri_to_aux, k, j, i)});
          }
      break;
    case Mode::aux_g:
      for (std::size_t i = 1; i <= n; ++i) {
        if (net.options.granularity == Granularity::stage && i % net.options.stage_size != 0) continue;
        for (std::size_t k = 0; k < K; ++k)
          for (std::size_t j = window_start(i, W); j < i; ++j) {
            out.push_back({Direction::pri_to_aux, k, j, i, ""});
          }
      }
      break;
    case Mode::symmetric:
      for (std::size_t i = 1; i <= n; ++i)
        for (std::size_t k = 0; k < K; ++k) {
          out.push_back({Direction::aux_to_pri, k, i - 1, i, ""});
          out.push_back({Direction::pri_to_aux, k, i - 1, i, ""});
        }
      break;
    default:
      break;
  }
  return out;
}

}  // namespace detail

/// Structural checks over a built or deserialized network. Throws
/// InvariantViolation naming the failed property.
inline void validate(const AuxNetwork& net) {
  const std::size_t n = net.n_layers();
  for (const auto& c : net.connections) {
    if (c.src_layer >= c.dst_layer) {
      throw InvariantViolation("acyclic", "connection " + std::to_string(c.src_layer) + " -> " +
                                              std::to_string(c.dst_layer) + " is not forward");
    }
    if (c.dst_layer > n || c.aux_task >= net.aux_count()) {
      throw InvariantViolation("connection_range", "connection outside the network");
    }
    if (net.mode != Mode::symmetric && c.dst_layer - c.src_layer > net.options.window) {
      throw InvariantViolation("window", "connection spans more than " +
                                             std::to_string(net.options.window) + " layers");
    }
    if ((net.mode == Mode::aux_g || net.mode == Mode::pruned) &&
        c.direction == Direction::aux_to_pri) {
      throw InvariantViolation("asymmetry", "auxiliary-to-primary connection in " +
                                                std::string(to_string(net.mode)) + " mode");
    }
  }
  if (net.mode == Mode::aux_nas) {
    std::set<std::string> referenced;
    for (const auto& c : net.connections) {
      const ParamGroup want =
          c.direction == Direction::aux_to_pri ? ParamGroup::alpha_p : ParamGroup::alpha_a;
      if (c.arch_weight.empty() || !net.params.contains(c.arch_weight) ||
          net.params.entry(c.arch_weight).group != want || !referenced.insert(c.arch_weight).second) {
        throw InvariantViolation("alpha_partition", "connection without a unique " +
                                                        std::string(to_string(want)) + " weight");
      }
    }
    const auto alphas = net.params.names_if(
        [](const std::string&, const ParamEntry& e) { return is_arch_group(e.group); });
    if (alphas.size() != referenced.size()) {
      throw InvariantViolation("alpha_partition", "architecture weight without a connection");
    }
  }

  // Kahn sweep over (branch, layer) nodes: layer edges plus connections.
  const std::size_t branches = 1 + (net.has_aux_branches() ? net.aux_count() : 0);
  auto node = [n](std::size_t b, std::size_t l) { return b * (n + 1) + l; };
  const std::size_t total = branches * (n + 1);
  std::vector<std::vector<std::size_t>> adj(total);
  std::vector<std::size_t> indeg(total, 0);
  auto edge = [&](std::size_t a, std::size_t b) {
    adj[a].push_back(b);
    ++indeg[b];
  };
  for (std::size_t b = 0; b < branches; ++b)
    for (std::size_t l = 1; l <= n; ++l) edge(node(b, l - 1), node(b, l));
  for (const auto& c : net.connections) {
    if (!net.has_aux_branches()) break;
    const std::size_t aux = c.aux_task + 1;
    if (c.direction == Direction::aux_to_pri) edge(node(aux, c.src_layer), node(0, c.dst_layer));
    else edge(node(0, c.src_layer), node(aux, c.dst_layer));
  }
  std::queue<std::size_t> ready;
  for (std::size_t v = 0; v < total; ++v)
    if (indeg[v] == 0) ready.push(v);
  std::size_t seen = 0;
  while (!ready.empty()) {
    const std::size_t v = ready.front();
    ready.pop();
    ++seen;
    for (auto w : adj[v])
      if (--indeg[w] == 0) ready.push(w);
  }
  if (seen != total) throw InvariantViolation("acyclic", "cycle in the layer graph");
}

/// Builds the network for `opt.mode`. Parameters are drawn from `rng` with
/// the primary branch first, so every mode built from the same seed starts
/// from the same primary weights. Fusion projections start at zero and
/// architecture weights at `opt.alpha_init`.
inline AuxNetwork build(std::size_t input_dim, const BranchSpec& primary,
                        const std::vector<BranchSpec>& auxiliaries, const BuildOptions& opt,
                        Rng& rng) {
  if (input_dim == 0) throw ConfigError("input dimension must be >= 1");
  primary.validate("primary branch");
  for (std::size_t k = 0; k < auxiliaries.size(); ++k) {
    auxiliaries[k].validate("auxiliary branch " + std::to_string(k));
  }
  switch (opt.mode) {
    case Mode::single:
      if (!auxiliaries.empty()) throw ConfigError("single mode takes no auxiliary tasks");
      break;
    case Mode::pruned:
      throw ConfigError("pruned networks are produced by prune(), not built");
    case Mode::aux_head:
      break;
    default:
      if (auxiliaries.empty()) {
        throw ConfigError(std::string(to_string(opt.mode)) + " mode needs at least one auxiliary task");
      }
  }
  AuxNetwork net;
  net.mode = opt.mode;
  net.input_dim = input_dim;
  net.primary = primary;
  net.auxiliaries = auxiliaries;
  net.options = opt;

  if (net.has_aux_branches()) {
    for (std::size_t k = 0; k < auxiliaries.size(); ++k) {
      if (auxiliaries[k].n_layers != primary.n_layers) {
        throw ConfigError("auxiliary branch " + std::to_string(k) + " has " +
                          std::to_string(auxiliaries[k].n_layers) + " layers, primary has " +
                          std::to_string(primary.n_layers));
      }
    }
    if (opt.window == 0) throw ConfigError("window must be >= 1");
    if (opt.mode == Mode::aux_g && opt.granularity == Granularity::stage &&
        (opt.stage_size == 0 || primary.n_layers % opt.stage_size != 0)) {
      throw ConfigError("stage size " + std::to_string(opt.stage_size) + " does not divide " +
                        std::to_string(primary.n_layers) + " layers");
    }
  }

  detail::add_branch(net, Owner::primary, primary, rng);
  if (opt.mode == Mode::aux_head) {
    const std::size_t trunk = primary.width(primary.n_layers);
    for (std::size_t k = 0; k < auxiliaries.size(); ++k) {
      const int owner = static_cast<int>(k);
      const std::string p = branch_prefix(owner);
      net.params.add(p + "/head/w", ParamGroup::aux_weights, owner,
                     detail::he_normal(trunk, auxiliaries[k].head.out_dim, 1.0, rng));
      net.params.add(p + "/head/b", ParamGroup::aux_weights, owner,
                     Tensor({auxiliaries[k].head.out_dim}));
    }
  } else if (net.has_aux_branches()) {
    for (std::size_t k = 0; k < auxiliaries.size(); ++k) {
      detail::add_branch(net, static_cast<int>(k), auxiliaries[k], rng);
    }
  }

  net.connections = detail::make_connections(net);
  std::vector<int> owners{Owner::primary};
  if (net.has_aux_branches()) {
    for (std::size_t k = 0; k < auxiliaries.size(); ++k) owners.push_back(static_cast<int>(k));
  }
  for (int owner : owners) {
    for (std::size_t i = 1; i <= net.n_layers(); ++i) {
      const auto in = net.incoming(owner, i);
      if (in.empty()) continue;
      const std::size_t dst_w = net.branch(owner).width(i);
      std::size_t cat_w = 0;
      for (const auto& c : in) {
        const std::size_t src_w = net.source_width(c);
        if (opt.width_adapters && src_w != dst_w) {
          net.params.add(detail::adapter_name(owner, i, c), ParamGroup::fusion_projection, owner,
                         detail::he_normal(src_w, dst_w, 1.0, rng));
          cat_w += dst_w;
        } else {
          cat_w += src_w;
        }
      }
      net.params.add(layer_key(owner, i) + "/proj", ParamGroup::fusion_projection, owner,
                     Tensor({cat_w, dst_w}, 0.0));
    }
  }
  for (const auto& c : net.connections) {
    if (c.arch_weight.empty()) continue;
    net.params.add(c.arch_weight,
                   c.direction == Direction::aux_to_pri ? ParamGroup::alpha_p : ParamGroup::alpha_a,
                   static_cast<int>(c.aux_task), Tensor::scalar(opt.alpha_init));
  }
  validate(net);
  return net;
}

struct ForwardResult {
  Var primary;
  std::vector<Var> aux;
  Var primary_features;
};

namespace detail {

inline FusionOp bind_fusion(AuxNetwork& net, Tape& tape, int owner, std::size_t layer) {
  const std::string l = layer_key(owner, layer);
  FusionOp op;
  if (net.params.contains(l + "/proj")) op.projection = tape.param(net.params, l + "/proj");
  op.gamma = tape.param(net.params, l + "/gamma");
  op.beta = tape.param(net.params, l + "/beta");
  op.stats = &net.norm_stats.at(l);
  return op;
}

inline Var dense(AuxNetwork& net, Tape& tape, Var x, const std::string& prefix, bool activate) {
  Var y = ops::linear(x, tape.param(net.params, prefix + "/w"), tape.param(net.params, prefix + "/b"));
  return activate ? ops::relu(y) : y;
}

}  // namespace detail

/// Forward pass valid for every mode. Layers are evaluated layer-major
/// (all branches at layer i before any branch at layer i+1), primary first.
inline ForwardResult forward(AuxNetwork& net, Tape& tape, const Tensor& x, NormMode mode) {
  if (x.rank() != 2 || x.cols() != net.input_dim) {
    throw DimensionError("forward: input " + shape_str(x.shape()) + " for input width " +
                         std::to_string(net.input_dim));
  }
  Var xin = tape.constant(x);
  const std::size_t n = net.n_layers();
  const std::size_t branches = 1 + (net.has_aux_branches() ? net.aux_count() : 0);
  auto owner_of = [](std::size_t b) { return static_cast<int>(b) - 1; };

  std::vector<std::vector<Var>> h(branches);
  for (std::size_t b = 0; b < branches; ++b) {
    h[b].push_back(detail::dense(net, tape, xin, branch_prefix(owner_of(b)) + "/stem", true));
  }
  for (std::size_t i = 1; i <= n; ++i) {
    for (std::size_t b = 0; b < branches; ++b) {
      const int owner = owner_of(b);
      Var z = detail::dense(net, tape, h[b][i - 1], layer_key(owner, i), true);
      std::vector<FuseSource> sources;
      for (const auto& c : net.incoming(owner, i)) {
        FuseSource s;
        s.feature = c.direction == Direction::aux_to_pri ? h[c.aux_task + 1][c.src_layer]
                                                         : h[0][c.src_layer];
        if (!c.arch_weight.empty()) s.alpha = tape.param(net.params, c.arch_weight);
        const std::string adapter = detail::adapter_name(owner, i, c);
        if (net.params.contains(adapter)) s.adapter = tape.param(net.params, adapter);
        sources.push_back(s);
      }
      h[b].push_back(fuse(z, sources, detail::bind_fusion(net, tape, owner, i), mode));
    }
  }
  ForwardResult out;
  out.primary_features = h[0][n];
  out.primary = detail::dense(net, tape, h[0][n], "pri/head", false);
  if (net.has_aux_branches()) {
    for (std::size_t k = 0; k < net.aux_count(); ++k) {
      out.aux.push_back(detail::dense(net, tape, h[k + 1][n], branch_prefix(static_cast<int>(k)) + "/head", false));
    }
  } else if (net.mode == Mode::aux_head) {
    for (std::size_t k = 0; k < net.aux_count(); ++k) {
      out.aux.push_back(detail::dense(net, tape, h[0][n], branch_prefix(static_cast<int>(k)) + "/head", false));
    }
  }
  return out;
}

/// Soft parameter sharing: every layer of each branch fuses the previous
/// layer of the other branch.
inline ForwardResult forward_symmetric(AuxNetwork& net, Tape& tape, const Tensor& x, NormMode mode) {
  if (net.mode != Mode::symmetric) {
    throw ContractViolation("forward_symmetric on a " + std::string(to_string(net.mode)) + " network");
  }
  return forward(net, tape, x, mode);
}

inline double max_alpha_p(const AuxNetwork& net) {
  double m = 0.0;
  for (const auto& name : net.params.names_in(ParamGroup::alpha_p)) {
    m = std::max(m, std::abs(net.params.value(name).item()));
  }
  return m;
}

/// Only primary -> auxiliary edges are live, so the primary output depends
/// on primary parameters alone.
inline ForwardResult forward_asymmetric(AuxNetwork& net, Tape& tape, const Tensor& x, NormMode mode) {
  if (net.mode == Mode::aux_nas) {
    if (max_alpha_p(net) != 0.0) {
      throw ContractViolation("forward_asymmetric: residual auxiliary-to-primary connection with alpha != 0");
    }
  } else if (net.mode != Mode::aux_g) {
    throw ContractViolation("forward_asymmetric on a " + std::string(to_string(net.mode)) + " network");
  }
  return forward(net, tape, x, mode);
}

/// Bi-directional search network with architecture-weighted edges.
inline ForwardResult forward_supernet(AuxNetwork& net, Tape& tape, const Tensor& x, NormMode mode) {
  if (net.mode != Mode::aux_nas) {
    throw ContractViolation("forward_supernet on a " + std::string(to_string(net.mode)) + " network");
  }
  return forward(net, tape, x, mode);
}

/// The primary branch with every fusion layer removed: stem, dense+ReLU
/// layers, head. This is the plain single-task network the pruned network
/// is compared against.
inline Var forward_single_task(AuxNetwork& net, Tape& tape, const Tensor& x) {
  if (x.rank() != 2 || x.cols() != net.input_dim) {
    throw DimensionError("forward_single_task: input " + shape_str(x.shape()));
  }
  Var h = detail::dense(net, tape, tape.constant(x), "pri/stem", true);
  for (std::size_t i = 1; i <= net.n_layers(); ++i) {
    h = detail::dense(net, tape, h, layer_key(Owner::primary, i), true);
  }
  return detail::dense(net, tape, h, "pri/head", false);
}

/// Sets every auxiliary -> primary weight to exactly zero and returns the
/// largest magnitude seen before zeroing.
inline double hard_zero_alpha_p(AuxNetwork& net) {
  const double before = max_alpha_p(net);
  for (const auto& name : net.params.names_in(ParamGroup::alpha_p)) net.params.value(name).fill(0.0);
  return before;
}

/// Single-task inference network: auxiliary branches, heads, cross-task
/// connections, and primary fusion projections are deleted; the primary
/// path keeps its per-layer norm and activation.
inline AuxNetwork prune(const AuxNetwork& net) {
  if (net.mode == Mode::symmetric) {
    throw ContractViolation("prune: a symmetric network's primary output depends on auxiliary features");
  }
  AuxNetwork out;
  out.mode = Mode::pruned;
  out.input_dim = net.input_dim;
  out.primary = net.primary;
  out.options = net.options;
  for (const auto& [name, e] : net.params) {
    if (e.owner != Owner::primary) continue;
    if (e.group != ParamGroup::primary_weights && e.group != ParamGroup::norm_affine) continue;
    out.params.add(name, e.group, e.owner, e.value);
  }
  for (const auto& [key, s] : net.norm_stats) {
    if (key.rfind("pri/", 0) == 0) out.norm_stats.emplace(key, s);
  }
  validate(out);
  return out;
}

/// Trainable values of the plain single-task network (no fusion layers).
inline std::size_t single_task_param_count(std::size_t input_dim, const BranchSpec& spec) {
  std::size_t n = input_dim * spec.width(0) + spec.width(0);
  for (std::size_t i = 1; i <= spec.n_layers; ++i) {
    n += spec.width(i - 1) * spec.width(i) + spec.width(i);
  }
  return n + spec.width(spec.n_layers) * spec.head.out_dim + spec.head.out_dim;
}

/// Primary layers that carry a fusion norm (and therefore its affine pair).
inline std::size_t fused_primary_layers(const AuxNetwork& net) {
  std::size_t n = 0;
  for (std::size_t i = 1; i <= net.n_layers(); ++i) {
    if (net.params.contains(layer_key(Owner::primary, i) + "/gamma")) ++n;
  }
  return n;
}

}  // namespace auxnas
