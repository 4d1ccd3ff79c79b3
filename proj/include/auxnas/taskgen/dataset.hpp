#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "auxnas/archnet/spec.hpp"
#include "auxnas/tensor.hpp"

namespace auxnas {

enum class Split : std::uint8_t { train, val, test };

inline std::string_view to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "?";
}

inline Split split_from_string(std::string_view s) {
  if (s == "train") return Split::train;
  if (s == "val") return Split::val;
  if (s == "test") return Split::test;
  throw SchemaError("unknown split tag '" + std::string(s) + "'");
}

/// One task's labels. Regression labels have `head.out_dim` columns;
/// classification labels are one column of class indices.
struct TaskData {
  std::string name;
  HeadSpec head;
  Tensor labels;
};

/// Inputs and labels for the primary task (tasks[0]) and K auxiliary tasks,
/// with a split tag per sample.
struct Dataset {
  Tensor inputs;
  std::vector<TaskData> tasks;
  std::vector<Split> split;
  std::uint64_t seed = 0;
  double rho = 0.0;

  std::size_t size() const { return inputs.rows(); }
  std::size_t input_dim() const { return inputs.cols(); }
  std::size_t aux_count() const { return tasks.empty() ? 0 : tasks.size() - 1; }

  std::vector<std::size_t> indices(Split s) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < split.size(); ++i)
      if (split[i] == s) out.push_back(i);
    return out;
  }

  /// Content hash over inputs, labels, and split tags.
  std::uint64_t hash() const {
    std::uint64_t h = hash_tensor(inputs);
    for (const auto& t : tasks) h = hash_tensor(t.labels, h);
    for (auto s : split) {
      h ^= static_cast<std::uint64_t>(s);
      h *= 1099511628211ULL;
    }
    return h;
  }
};

/// Rows of a dataset gathered for one forward pass.
struct Batch {
  Tensor x;
  std::vector<Tensor> targets;          // regression tasks; empty tensor otherwise
  std::vector<std::vector<int>> classes;  // classification tasks; empty otherwise
  std::vector<std::size_t> rows;

  std::size_t size() const { return rows.size(); }
};

inline Tensor gather_rows(const Tensor& t, const std::vector<std::size_t>& rows) {
  Tensor out({rows.size(), t.cols()});
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (std::size_t c = 0; c < t.cols(); ++c) out(r, c) = t(rows[r], c);
  return out;
}

inline Batch gather(const Dataset& d, const std::vector<std::size_t>& rows) {
  if (rows.empty()) throw ContractViolation("gather: empty batch");
  for (auto r : rows) {
    if (r >= d.size()) throw ContractViolation("gather: row " + std::to_string(r) + " out of range");
  }
  Batch b;
  b.rows = rows;
  b.x = gather_rows(d.inputs, rows);
  for (const auto& t : d.tasks) {
    if (t.head.kind == HeadKind::classification) {
      std::vector<int> cls;
      cls.reserve(rows.size());
      for (auto r : rows) cls.push_back(static_cast<int>(t.labels(r, 0)));
      b.classes.push_back(std::move(cls));
      b.targets.emplace_back();
    } else {
      b.targets.push_back(gather_rows(t.labels, rows));
      b.classes.emplace_back();
    }
  }
  return b;
}

}  // namespace auxnas
