#pragma once

#include <algorithm>
#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "auxnas/taskgen/dataset.hpp"
#include "auxnas/util/rng.hpp"

namespace auxnas {

struct TaskDef {
  std::string name;
  HeadSpec head;
  double noise_std = 0.0;   // regression: Gaussian noise on standardized labels
  double label_flip = 0.0;  // classification: fraction of labels replaced
};

inline constexpr std::size_t kTeacherWidth = 32;

/// Two tanh layers, frozen after construction.
struct TeacherTrunk {
  std::size_t in_begin = 0, in_end = 0;  // input columns read
  Tensor w1, b1, w2, b2;

  std::vector<double> operator()(std::span<const double> x) const {
    const std::size_t h = w1.cols();
    std::vector<double> a(h), out(h);
    for (std::size_t j = 0; j < h; ++j) {
      double s = b1[j];
      for (std::size_t i = in_begin; i < in_end; ++i) s += x[i] * w1(i - in_begin, j);
      a[j] = std::tanh(s);
    }
    for (std::size_t j = 0; j < h; ++j) {
      double s = b2[j];
      for (std::size_t i = 0; i < h; ++i) s += a[i] * w2(i, j);
      out[j] = std::tanh(s);
    }
    return out;
  }
};

/// Synthetic primary/auxiliary tasks. Every task reads a mix of one shared
/// trunk over all inputs and a private trunk over its own block of inputs:
///   f_t = sqrt(rho) S(x) + sqrt(1 - rho) T_t(x_t),
/// and the head mixes a shared matrix with a private one the same way.
/// At rho = 1 every task sees the same features and head; at rho = 0 the
/// tasks read disjoint inputs and are independent.
struct TaskFamily {
  std::size_t input_dim = 0;
  double rho = 0.0;
  std::vector<TaskDef> tasks;
  TeacherTrunk shared;
  std::vector<TeacherTrunk> private_trunks;
  Tensor shared_head;
  std::vector<Tensor> private_heads;

  std::size_t head_cols(const TaskDef& t) const { return t.head.out_dim; }

  std::vector<double> features(std::size_t task, std::span<const double> x) const {
    const auto s = shared(x);
    const auto p = private_trunks[task](x);
    const double a = std::sqrt(rho), b = std::sqrt(1.0 - rho);
    std::vector<double> f(s.size());
    for (std::size_t j = 0; j < f.size(); ++j) f[j] = a * s[j] + b * p[j];
    return f;
  }

  std::vector<double> teacher_output(std::size_t task, std::span<const double> x) const {
    const auto f = features(task, x);
    const std::size_t cols = tasks[task].head.out_dim;
    const double a = std::sqrt(rho), b = std::sqrt(1.0 - rho);
    std::vector<double> y(cols, 0.0);
    for (std::size_t c = 0; c < cols; ++c)
      for (std::size_t j = 0; j < f.size(); ++j) {
        y[c] += f[j] * (a * shared_head(j, c) + b * private_heads[task](j, c));
      }
    return y;
  }
};

namespace detail {

inline TeacherTrunk make_trunk(std::size_t begin, std::size_t end, Rng& rng) {
  TeacherTrunk t;
  t.in_begin = begin;
  t.in_end = end;
  const std::size_t in = end - begin;
  std::normal_distribution<double> d1(0.0, 1.0 / std::sqrt(static_cast<double>(in)));
  std::normal_distribution<double> d2(0.0, 1.0 / std::sqrt(static_cast<double>(kTeacherWidth)));
  std::normal_distribution<double> db(0.0, 0.1);
  t.w1 = Tensor({in, kTeacherWidth});
  t.b1 = Tensor({kTeacherWidth});
  t.w2 = Tensor({kTeacherWidth, kTeacherWidth});
  t.b2 = Tensor({kTeacherWidth});
  for (double& v : t.w1.data()) v = d1(rng);
  for (double& v : t.b1.data()) v = db(rng);
  for (double& v : t.w2.data()) v = d2(rng);
  for (double& v : t.b2.data()) v = db(rng);
  return t;
}

}  // namespace detail

/// Draws the frozen teacher for `tasks` (tasks[0] is the primary task).
inline TaskFamily make_family(std::size_t input_dim, double rho, std::vector<TaskDef> tasks,
                              std::uint64_t teacher_seed) {
  if (tasks.empty()) throw ConfigError("task family needs at least the primary task");
  if (!(rho >= 0.0 && rho <= 1.0)) throw ConfigError("relatedness rho must lie in [0, 1]");
  if (input_dim < tasks.size()) {
    throw ConfigError("input_dim " + std::to_string(input_dim) + " is smaller than the " +
                      std::to_string(tasks.size()) + " tasks (one private input block each)");
  }
  std::size_t max_cols = 0;
  for (std::size_t t = 0; t < tasks.size(); ++t) {
    const auto& head = tasks[t].head;
    if (head.out_dim == 0) throw ConfigError("task " + std::to_string(t) + ": output dimension must be >= 1");
    if (head.kind == HeadKind::classification && head.out_dim < 2) {
      throw ConfigError("task " + std::to_string(t) + ": classification needs at least 2 classes");
    }
    if (tasks[t].noise_std < 0.0) throw ConfigError("task " + std::to_string(t) + ": noise_std < 0");
    if (tasks[t].label_flip < 0.0 || tasks[t].label_flip > 1.0) {
      throw ConfigError("task " + std::to_string(t) + ": label_flip outside [0, 1]");
    }
    if (tasks[t].name.empty()) tasks[t].name = t == 0 ? "primary" : "aux" + std::to_string(t - 1);
    max_cols = std::max(max_cols, head.out_dim);
  }

  TaskFamily f;
  f.input_dim = input_dim;
  f.rho = rho;
  f.tasks = std::move(tasks);
  Rng rng = substream(teacher_seed, "teacher");
  f.shared = detail::make_trunk(0, input_dim, rng);
  const std::size_t T = f.tasks.size();
  for (std::size_t t = 0; t < T; ++t) {
    f.private_trunks.push_back(detail::make_trunk(t * input_dim / T, (t + 1) * input_dim / T, rng));
  }
  std::normal_distribution<double> dh(0.0, 1.0 / std::sqrt(static_cast<double>(kTeacherWidth)));
  f.shared_head = Tensor({kTeacherWidth, max_cols});
  for (double& v : f.shared_head.data()) v = dh(rng);
  for (std::size_t t = 0; t < T; ++t) {
    Tensor h({kTeacherWidth, f.tasks[t].head.out_dim});
    for (double& v : h.data()) v = dh(rng);
    f.private_heads.push_back(std::move(h));
  }
  return f;
}

/// Fractions of samples assigned to train and validation; the rest is test.
inline constexpr double kTrainFraction = 0.70;
inline constexpr double kValFraction = 0.15;

inline std::vector<Split> make_splits(std::size_t n, Rng& rng) {
  const std::size_t n_train = static_cast<std::size_t>(std::floor(kTrainFraction * static_cast<double>(n)));
  const std::size_t n_val = static_cast<std::size_t>(std::floor(kValFraction * static_cast<double>(n)));
  std::vector<Split> split(n, Split::test);
  const auto perm = permutation(n, rng);
  for (std::size_t i = 0; i < n; ++i) {
    split[perm[i]] = i < n_train ? Split::train : (i < n_train + n_val ? Split::val : Split::test);
  }
  return split;
}

/// Samples standard-normal inputs and labels them with the teacher.
/// Regression labels are standardized per column before noise is added;
/// classification labels are the teacher argmax with a flipped fraction.
inline Dataset generate(const TaskFamily& family, std::size_t n_samples, std::uint64_t seed) {
  if (n_samples < 30) throw ConfigError("generate: need at least 30 samples, got " + std::to_string(n_samples));
  if (family.input_dim == 0 || family.tasks.empty()) throw ConfigError("generate: degenerate task family");
  Rng rng = substream(seed, "samples");
  Dataset d;
  d.seed = seed;
  d.rho = family.rho;
  d.inputs = Tensor({n_samples, family.input_dim});
  std::normal_distribution<double> normal(0.0, 1.0);
  for (double& v : d.inputs.data()) v = normal(rng);

  for (std::size_t t = 0; t < family.tasks.size(); ++t) {
    const TaskDef& def = family.tasks[t];
    const std::size_t cols = def.head.out_dim;
    Tensor raw({n_samples, cols});
    for (std::size_t r = 0; r < n_samples; ++r) {
      const auto y = family.teacher_output(t, d.inputs.data().subspan(r * family.input_dim, family.input_dim));
      for (std::size_t c = 0; c < cols; ++c) raw(r, c) = y[c];
    }
    TaskData task{def.name, def.head, Tensor()};
    if (def.head.kind == HeadKind::regression) {
      for (std::size_t c = 0; c < cols; ++c) {
        double mean = 0.0, sq = 0.0;
        for (std::size_t r = 0; r < n_samples; ++r) mean += raw(r, c);
        mean /= static_cast<double>(n_samples);
        for (std::size_t r = 0; r < n_samples; ++r) sq += (raw(r, c) - mean) * (raw(r, c) - mean);
        const double sd = std::sqrt(sq / static_cast<double>(n_samples));
        for (std::size_t r = 0; r < n_samples; ++r) {
          raw(r, c) = sd > 0.0 ? (raw(r, c) - mean) / sd : 0.0;
        }
      }
      std::normal_distribution<double> noise(0.0, 1.0);
      for (double& v : raw.data()) v += def.noise_std * noise(rng);
      task.labels = std::move(raw);
    } else {
      Tensor cls({n_samples, 1});
      for (std::size_t r = 0; r < n_samples; ++r) {
        std::size_t best = 0;
        for (std::size_t c = 1; c < cols; ++c)
          if (raw(r, c) > raw(r, best)) best = c;
        cls(r, 0) = static_cast<double>(best);
      }
      const std::size_t flips = static_cast<std::size_t>(std::floor(def.label_flip * static_cast<double>(n_samples)));
      const auto order = permutation(n_samples, rng);
      std::uniform_int_distribution<std::size_t> other(1, cols - 1);
      for (std::size_t i = 0; i < flips; ++i) {
        const std::size_t r = order[i];
        cls(r, 0) = static_cast<double>((static_cast<std::size_t>(cls(r, 0)) + other(rng)) % cols);
      }
      task.labels = std::move(cls);
    }
    d.tasks.push_back(std::move(task));
  }
  Rng split_rng = substream(seed, "split");
  d.split = make_splits(n_samples, split_rng);
  return d;
}

}  // namespace auxnas
