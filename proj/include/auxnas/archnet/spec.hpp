#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include "auxnas/errors.hpp"

namespace auxnas {

enum class HeadKind { regression, classification };
enum class LossKind { mse, cosine, cross_entropy };

/// Output head of a branch. For classification `out_dim` is the class count.
struct HeadSpec {
  HeadKind kind = HeadKind::regression;
  std::size_t out_dim = 1;
  LossKind loss = LossKind::mse;

  void validate(std::string_view what) const {
    if (out_dim == 0) throw ConfigError(std::string(what) + ": head dimension must be >= 1");
    if (kind == HeadKind::classification && loss != LossKind::cross_entropy) {
      throw ConfigError(std::string(what) + ": classification heads use cross_entropy");
    }
    if (kind == HeadKind::regression && loss == LossKind::cross_entropy) {
      throw ConfigError(std::string(what) + ": regression heads use mse or cosine");
    }
  }
};

struct BranchSpec {
  std::size_t n_layers = 0;
  std::vector<std::size_t> layer_widths;
  HeadSpec head;

  /// Width of layer j, where layer 0 is the stem output.
  std::size_t width(std::size_t j) const {
    return j == 0 ? layer_widths.front() : layer_widths.at(j - 1);
  }

  void validate(std::string_view what) const {
    if (n_layers == 0) throw ConfigError(std::string(what) + ": n_layers must be positive");
    if (layer_widths.size() != n_layers) {
      throw ConfigError(std::string(what) + ": " + std::to_string(layer_widths.size()) +
                        " widths for " + std::to_string(n_layers) + " layers");
    }
    for (auto w : layer_widths) {
      if (w == 0) throw ConfigError(std::string(what) + ": layer widths must be >= 1");
    }
    head.validate(what);
  }
};

enum class Mode { single, symmetric, aux_g, aux_nas, aux_head, pruned };
enum class Granularity { layer, stage };
enum class Direction { aux_to_pri, pri_to_aux };

/// Directed cross-task edge from layer `src_layer` of one branch into the
/// fusion of layer `dst_layer` of the other. `arch_weight` names the
/// architecture weight gating it; empty means a fixed indicator of 1.
struct Connection {
  Direction direction = Direction::pri_to_aux;
  std::size_t aux_task = 0;
  std::size_t src_layer = 0;
  std::size_t dst_layer = 1;
  std::string arch_weight;

  bool operator==(const Connection&) const = default;
};

inline std::string_view to_string(Mode m) {
  switch (m) {
    case Mode::single: return "single";
    case Mode::symmetric: return "symmetric";
    case Mode::aux_g: return "aux_g";
    case Mode::aux_nas: return "aux_nas";
    case Mode::aux_head: return "aux_head";
    case Mode::pruned: return "pruned";
  }
  return "?";
}

inline Mode mode_from_string(std::string_view s) {
  for (auto m : {Mode::single, Mode::symmetric, Mode::aux_g, Mode::aux_nas, Mode::aux_head,
                 Mode::pruned}) {
    if (to_string(m) == s) return m;
  }
  throw SchemaError("unknown network mode '" + std::string(s) + "'");
}

inline std::string_view to_string(Granularity g) {
  return g == Granularity::layer ? "layer" : "stage";
}

inline Granularity granularity_from_string(std::string_view s) {
  if (s == "layer") return Granularity::layer;
  if (s == "stage") return Granularity::stage;
  throw ConfigError("unknown granularity '" + std::string(s) + "'");
}

inline std::string_view to_string(Direction d) {
  return d == Direction::aux_to_pri ? "aux_to_pri" : "pri_to_aux";
}

inline Direction direction_from_string(std::string_view s) {
  if (s == "aux_to_pri") return Direction::aux_to_pri;
  if (s == "pri_to_aux") return Direction::pri_to_aux;
  throw SchemaError("unknown connection direction '" + std::string(s) + "'");
}

inline std::string_view to_string(HeadKind k) {
  return k == HeadKind::regression ? "regression" : "classification";
}

inline HeadKind head_kind_from_string(std::string_view s) {
  if (s == "regression") return HeadKind::regression;
  if (s == "classification") return HeadKind::classification;
  throw ConfigError("unknown head kind '" + std::string(s) + "'");
}

inline std::string_view to_string(LossKind k) {
  switch (k) {
    case LossKind::mse: return "mse";
    case LossKind::cosine: return "cosine";
    case LossKind::cross_entropy: return "cross_entropy";
  }
  return "?";
}

inline LossKind loss_kind_from_string(std::string_view s) {
  if (s == "mse") return LossKind::mse;
  if (s == "cosine") return LossKind::cosine;
  if (s == "cross_entropy") return LossKind::cross_entropy;
  throw ConfigError("unknown loss '" + std::string(s) + "'");
}

}  // namespace auxnas
