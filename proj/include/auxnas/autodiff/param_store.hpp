#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "auxnas/errors.hpp"
#include "auxnas/tensor.hpp"

namespace auxnas {

/// Disjoint parameter groups. Every trainable value lives in exactly one.
enum class ParamGroup {
  primary_weights,
  aux_weights,
  fusion_projection,
  norm_affine,
  alpha_p,  // auxiliary -> primary architecture weights
  alpha_a,  // primary -> auxiliary architecture weights
};

inline std::string_view to_string(ParamGroup g) {
  switch (g) {
    case ParamGroup::primary_weights: return "primary_weights";
    case ParamGroup::aux_weights: return "aux_weights";
    case ParamGroup::fusion_projection: return "fusion_projection";
    case ParamGroup::norm_affine: return "norm_affine";
    case ParamGroup::alpha_p: return "alpha_p";
    case ParamGroup::alpha_a: return "alpha_a";
  }
  return "?";
}

inline ParamGroup param_group_from_string(std::string_view s) {
  for (auto g : {ParamGroup::primary_weights, ParamGroup::aux_weights,
                 ParamGroup::fusion_projection, ParamGroup::norm_affine,
                 ParamGroup::alpha_p, ParamGroup::alpha_a}) {
    if (to_string(g) == s) return g;
  }
  throw SchemaError("unknown parameter group '" + std::string(s) + "'");
}

inline bool is_arch_group(ParamGroup g) {
  return g == ParamGroup::alpha_p || g == ParamGroup::alpha_a;
}

/// Branch that owns a parameter: the primary branch or auxiliary task k.
struct Owner {
  static constexpr int primary = -1;
};

struct ParamEntry {
  ParamGroup group;
  int owner = Owner::primary;
  Tensor value;
};

using GradMap = std::map<std::string, Tensor>;

/// Named parameters, ordered by name so iteration is deterministic.
class ParamStore {
 public:
  void add(const std::string& name, ParamGroup group, int owner, Tensor value) {
    if (entries_.count(name)) throw ContractViolation("duplicate parameter '" + name + "'");
    entries_.emplace(name, ParamEntry{group, owner, std::move(value)});
  }

  bool contains(const std::string& name) const { return entries_.count(name) != 0; }

  const ParamEntry& entry(const std::string& name) const {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw ContractViolation("unknown parameter '" + name + "'");
    return it->second;
  }
  ParamEntry& entry(const std::string& name) {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw ContractViolation("unknown parameter '" + name + "'");
    return it->second;
  }

  Tensor& value(const std::string& name) { return entry(name).value; }
  const Tensor& value(const std::string& name) const { return entry(name).value; }

  void erase(const std::string& name) { entries_.erase(name); }

  std::vector<std::string> names_if(
      const std::function<bool(const std::string&, const ParamEntry&)>& pred) const {
    std::vector<std::string> out;
    for (const auto& [n, e] : entries_) {
      if (pred(n, e)) out.push_back(n);
    }
    return out;
  }

  std::vector<std::string> names_in(ParamGroup g) const {
    return names_if([g](const std::string&, const ParamEntry& e) { return e.group == g; });
  }

  std::size_t size() const { return entries_.size(); }

  /// Total number of scalar values across the matching entries.
  std::size_t count_values(
      const std::function<bool(const std::string&, const ParamEntry&)>& pred) const {
    std::size_t n = 0;
    for (const auto& [name, e] : entries_) {
      if (pred(name, e)) n += e.value.numel();
    }
    return n;
  }
  std::size_t count_values() const {
    return count_values([](const std::string&, const ParamEntry&) { return true; });
  }

  /// Architecture weights are scalars confined to [0, 1].
  void clamp_alphas() {
    for (auto& [name, e] : entries_) {
      if (!is_arch_group(e.group)) continue;
      for (double& v : e.value.data()) v = std::clamp(v, 0.0, 1.0);
    }
  }

  std::uint64_t hash_group(const std::function<bool(const ParamEntry&)>& pred) const {
    std::uint64_t h = 1469598103934665603ULL;
    for (const auto& [name, e] : entries_) {
      if (pred(e)) h = hash_tensor(e.value, h);
    }
    return h;
  }

  auto begin() { return entries_.begin(); }
  auto end() { return entries_.end(); }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }

 private:
  std::map<std::string, ParamEntry> entries_;
};

}  // namespace auxnas
