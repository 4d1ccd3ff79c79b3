#pragma once

#include <cmath>
#include <cstdint>
#include <deque>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "auxnas/autodiff/param_store.hpp"
#include "auxnas/errors.hpp"
#include "auxnas/tensor.hpp"

namespace auxnas {

class Tape;

/// Handle to a value recorded on a Tape.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape& tape() const { return *tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }
  inline const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Elementary operation counts attributed to one node. Multiply-adds count
/// as one operation each.
struct OpCost {
  std::uint64_t forward = 0;
  std::uint64_t backward = 0;
};

struct OpCount {
  std::uint64_t forward = 0;
  std::uint64_t backward = 0;
  std::map<std::string, std::uint64_t> forward_by_kind;
  std::uint64_t total() const { return forward + backward; }
};

/// Receives the upstream gradient of a node and accumulates into the
/// gradients of its inputs. Pointers are null for inputs that do not
/// require a gradient.
using BackwardFn = std::function<void(const Tensor& upstream, std::vector<Tensor*>& input_grads)>;

/// Append-only record of a forward computation. Nodes are appended in
/// evaluation order, so every node's inputs precede it, and `backward`
/// walks the nodes in exact reverse order.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value) { return push("constant", {}, std::move(value), nullptr, {}, false); }

  /// Leaf that receives a gradient (used for inputs under test).
  Var variable(Tensor value) { return push("variable", {}, std::move(value), nullptr, {}, true); }

  /// Leaf bound to a stored parameter. Repeated calls return the same node.
  Var param(const ParamStore& store, const std::string& name) {
    if (auto it = param_nodes_.find(name); it != param_nodes_.end()) return Var(this, it->second);
    const auto& e = store.entry(name);
    Var v = push("param", {}, e.value, nullptr, {}, true);
    nodes_[v.id()].param = name;
    nodes_[v.id()].owner = e.owner;
    param_nodes_.emplace(name, v.id());
    return v;
  }

  Var record(std::string op, const std::vector<Var>& inputs, Tensor value, BackwardFn fn,
             OpCost cost) {
    std::vector<std::size_t> ids;
    ids.reserve(inputs.size());
    bool needs_grad = false;
    for (const auto& in : inputs) {
      if (&in.tape() != this) throw ContractViolation(op + ": input recorded on another tape");
      ids.push_back(in.id());
      needs_grad = needs_grad || nodes_[in.id()].requires_grad;
    }
    check_finite(value, op);
    return push(std::move(op), std::move(ids), std::move(value), std::move(fn), cost, needs_grad);
  }

  const Tensor& value(Var v) const { return nodes_.at(v.id()).value; }
  std::size_t size() const { return nodes_.size(); }
  const std::string& op(std::size_t id) const { return nodes_.at(id).op; }
  const std::vector<std::size_t>& inputs(std::size_t id) const { return nodes_.at(id).inputs; }

  /// Reverse-mode pass from a scalar root. Gradients are retained on the
  /// tape and can be queried with `grad`.
  void backward(Var root) {
    const Tensor& rv = value(root);
    if (rv.numel() != 1) {
      throw ContractViolation("backward root must be scalar, got " + shape_str(rv.shape()));
    }
    grads_.assign(nodes_.size(), Tensor());
    grads_[root.id()] = Tensor(rv.shape(), 1.0);
    std::vector<Tensor*> in_grads;
    for (std::size_t i = root.id() + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.backward || grads_[i].empty() || !n.requires_grad) continue;
      in_grads.assign(n.inputs.size(), nullptr);
      for (std::size_t k = 0; k < n.inputs.size(); ++k) {
        const std::size_t in = n.inputs[k];
        if (!nodes_[in].requires_grad) continue;
        if (grads_[in].empty()) grads_[in] = Tensor::zeros_like(nodes_[in].value);
        in_grads[k] = &grads_[in];
      }
      n.backward(grads_[i], in_grads);
    }
  }

  /// Gradient for every parameter in `store`; parameters without a path
  /// to the root get an exact zero tensor.
  GradMap backward(Var root, const ParamStore& store) {
    backward(root);
    return param_grads(store);
  }

  GradMap param_grads(const ParamStore& store) const {
    GradMap out;
    for (const auto& [name, e] : store) {
      auto it = param_nodes_.find(name);
      if (it != param_nodes_.end() && it->second < grads_.size() && !grads_[it->second].empty()) {
        out.emplace(name, grads_[it->second]);
      } else {
        out.emplace(name, Tensor::zeros_like(e.value));
      }
    }
    return out;
  }

  Tensor grad(Var v) const {
    if (v.id() < grads_.size() && !grads_[v.id()].empty()) return grads_[v.id()];
    return Tensor::zeros_like(value(v));
  }

  OpCount op_count() const {
    OpCount c;
    for (const auto& n : nodes_) {
      c.forward += n.cost.forward;
      c.backward += n.cost.backward;
      if (n.cost.forward) c.forward_by_kind[n.op] += n.cost.forward;
    }
    return c;
  }

  /// Parameters bound on this tape, with the branch that owns each.
  std::map<std::string, int> touched_params() const {
    std::map<std::string, int> out;
    for (const auto& n : nodes_) {
      if (n.param) out.emplace(*n.param, n.owner);
    }
    return out;
  }

  /// Smallest |input| seen by a kinked op (ReLU, |.|). Finite differences
  /// are unreliable when this is comparable to the step size.
  double min_kink_distance() const { return min_kink_; }
  void note_kink(double distance) { min_kink_ = std::min(min_kink_, distance); }

 private:
  struct Node {
    std::string op;
    std::vector<std::size_t> inputs;
    Tensor value;
    BackwardFn backward;
    OpCost cost;
    bool requires_grad = false;
    std::optional<std::string> param;
    int owner = Owner::primary;
  };

  Var push(std::string op, std::vector<std::size_t> inputs, Tensor value, BackwardFn fn,
           OpCost cost, bool requires_grad) {
    nodes_.push_back(Node{std::move(op), std::move(inputs), std::move(value), std::move(fn), cost,
                          requires_grad, std::nullopt, Owner::primary});
    return Var(this, nodes_.size() - 1);
  }

  // deque keeps node values at stable addresses for backward closures.
  std::deque<Node> nodes_;
  std::vector<Tensor> grads_;
  std::unordered_map<std::string, std::size_t> param_nodes_;
  double min_kink_ = std::numeric_limits<double>::infinity();
};

inline const Tensor& Var::value() const { return tape_->value(*this); }

}  // namespace auxnas
