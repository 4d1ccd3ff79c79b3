#pragma once

#include <atomic>
#include <chrono>
#include <exception>
#include <map>
#include <optional>
#include <set>
#include <ostream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "auxnas/evalbench/metrics.hpp"
#include "auxnas/taskgen/csv.hpp"
#include "auxnas/taskgen/family.hpp"
#include "auxnas/trainer/train.hpp"

namespace auxnas {

enum class Method { single, aux_head, aux_g_stage, aux_g_layer, aux_nas, aux_nas_no_features, symmetric };

inline constexpr Method kAllMethods[] = {Method::single,  Method::aux_head, Method::aux_g_stage,
                                         Method::aux_g_layer, Method::aux_nas, Method::aux_nas_no_features,
                                         Method::symmetric};

inline std::string_view to_string(Method m) {
  switch (m) {
    case Method::single: return "single";
    case Method::aux_head: return "aux_head";
    case Method::aux_g_stage: return "aux_g_stage";
    case Method::aux_g_layer: return "aux_g_layer";
    case Method::aux_nas: return "aux_nas";
    case Method::aux_nas_no_features: return "aux_nas_no_features";
    case Method::symmetric: return "symmetric";
  }
  return "?";
}

inline Method method_from_string(std::string_view s) {
  for (auto m : kAllMethods)
    if (to_string(m) == s) return m;
  throw ConfigError("unknown method '" + std::string(s) + "'");
}

/// Branch shapes shared by every method. Heads come from the dataset.
struct ArchConfig {
  std::size_t n_layers = 4;
  std::size_t width = 32;
  std::size_t aux_tasks = 1;
  std::size_t window = 3;
  std::size_t stage_size = 2;
  double alpha_init = 0.5;
  bool width_adapters = false;

  void validate() const {
    if (n_layers == 0 || width == 0) throw ConfigError("arch: n_layers and width must be >= 1");
    if (window == 0) throw ConfigError("arch.window must be >= 1");
    if (stage_size == 0) throw ConfigError("arch.stage_size must be >= 1");
    if (!(alpha_init >= 0.0 && alpha_init <= 1.0)) throw ConfigError("arch.alpha_init must lie in [0, 1]");
  }
};

inline Mode mode_of(Method m) {
  switch (m) {
    case Method::single: return Mode::single;
    case Method::aux_head: return Mode::aux_head;
    case Method::aux_g_stage:
    case Method::aux_g_layer: return Mode::aux_g;
    case Method::aux_nas:
    case Method::aux_nas_no_features: return Mode::aux_nas;
    case Method::symmetric: return Mode::symmetric;
  }
  return Mode::single;
}

/// Untrained network for `method` on `data`, initialized from the "init"
/// stream of `seed`.
inline AuxNetwork build_for(Method method, const ArchConfig& arch, const Dataset& data, std::uint64_t seed) {
  arch.validate();
  const std::size_t k = method == Method::single ? 0 : arch.aux_tasks;
  if (data.aux_count() < k) {
    throw ConfigError("dataset has " + std::to_string(data.aux_count()) + " auxiliary tasks, arch.aux_tasks is " +
                      std::to_string(k));
  }
  auto branch = [&](const HeadSpec& head) {
    BranchSpec b;
    b.n_layers = arch.n_layers;
    b.layer_widths.assign(arch.n_layers, arch.width);
    b.head = head;
    return b;
  };
  std::vector<BranchSpec> aux;
  for (std::size_t i = 0; i < k; ++i) aux.push_back(branch(data.tasks[i + 1].head));
  BuildOptions opt;
  opt.mode = mode_of(method);
  opt.window = arch.window;
  opt.stage_size = arch.stage_size;
  opt.granularity = method == Method::aux_g_stage ? Granularity::stage : Granularity::layer;
  opt.width_adapters = arch.width_adapters;
  opt.alpha_init = arch.alpha_init;
  Rng rng = substream(seed, "init");
  return build(data.input_dim(), branch(data.tasks[0].head), aux, opt, rng);
}

/// Network used at inference: everything but the symmetric baseline is
/// pruned to its primary path.
inline AuxNetwork inference_network(const AuxNetwork& net) {
  if (net.mode == Mode::symmetric || net.mode == Mode::pruned) return net;
  return prune(net);
}

struct Evaluation {
  MetricMap metrics;
  double loss = 0.0;
  std::uint64_t forward_ops = 0;
};

/// Primary-task metrics on `split`, using running normalization
/// statistics. Outside the symmetric baseline, a forward pass that binds
/// any non-primary parameter is an invariant violation.
inline Evaluation evaluate(const AuxNetwork& net, const Dataset& data, Split split) {
  const auto rows = data.indices(split);
  if (rows.empty()) throw ContractViolation("evaluate: the " + std::string(to_string(split)) + " split is empty");
  AuxNetwork copy = net;
  Tape tape;
  const Batch b = gather(data, rows);
  Var out = forward(copy, tape, b.x, NormMode::eval).primary;
  if (net.mode != Mode::symmetric) {
    for (const auto& [name, owner] : tape.touched_params()) {
      const auto group = net.params.entry(name).group;
      if (owner != Owner::primary || is_arch_group(group) || group == ParamGroup::fusion_projection) {
        throw InvariantViolation("evaluation_purity", "test forward pass touched '" + name + "'");
      }
    }
  }
  Evaluation e;
  e.metrics = metrics(out.value(), gather_rows(data.tasks[0].labels, rows), net.primary.head);
  e.loss = task_loss(out, b, 0, net.primary.head).value().item();
  e.forward_ops = tape.op_count().forward;
  return e;
}

struct RunResult {
  Method method = Method::single;
  std::uint64_t seed = 0;
  bool ok = false;
  std::string error;
  MetricMap metrics;
  std::uint64_t dataset_hash = 0;
  double max_alpha_p = 0.0;  // before pruning
  double train_ms = 0.0;
  std::uint64_t inference_ops = 0;
  TrainReport report;
};

inline TrainConfig config_for(Method m, TrainConfig cfg, std::uint64_t seed) {
  cfg.batching_seed = seed;
  if (m == Method::aux_nas_no_features) cfg.freeze_alpha_p = true;
  return cfg;
}

/// Trains one method on `data` and evaluates its inference network on the
/// test split. Divergence marks the run failed.
inline RunResult run_method(Method method, const ArchConfig& arch, const TrainConfig& train_cfg,
                            const Dataset& data, std::uint64_t seed) {
  RunResult r;
  r.method = method;
  r.seed = seed;
  r.dataset_hash = data.hash();
  const auto t0 = std::chrono::steady_clock::now();
  try {
    AuxNetwork net = build_for(method, arch, data, seed);
    r.report = train(net, data, config_for(method, train_cfg, seed));
    r.report.method = std::string(to_string(method));
    r.max_alpha_p = max_alpha_p(net);
    const Evaluation e = evaluate(inference_network(net), data, Split::test);
    r.metrics = e.metrics;
    r.inference_ops = e.forward_ops;
    r.ok = true;
  } catch (const DivergenceError& e) {
    r.error = e.what();
  } catch (const NonFiniteError& e) {
    r.error = e.what();
  }
  r.train_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

/// Trains the hard-sharing baseline: one trunk, one head per task.
inline AuxNetwork aux_head_baseline(const ArchConfig& arch, const Dataset& data, const TrainConfig& cfg,
                                    std::uint64_t seed) {
  AuxNetwork net = build_for(Method::aux_head, arch, data, seed);
  train_joint(net, data, config_for(Method::aux_head, cfg, seed));
  return net;
}

struct SyntheticSource {
  std::size_t input_dim = 16;
  double rho = 0.9;
  std::vector<TaskDef> tasks;
  std::size_t n_samples = 4000;
};

struct CsvSource {
  std::string path;
  CsvSchema schema;
};

struct Protocol {
  std::vector<Method> methods;
  std::vector<std::uint64_t> seeds;
  std::optional<SyntheticSource> synthetic;
  std::optional<CsvSource> csv;
  ArchConfig arch;
  TrainConfig train;
  std::map<Method, TrainConfig> overrides;
  std::size_t jobs = 1;

  void validate() const {
    if (methods.empty()) throw ConfigError("protocol.methods is empty");
    if (seeds.empty()) throw ConfigError("protocol.seeds is empty");
    if (synthetic.has_value() == csv.has_value()) throw ConfigError("protocol needs exactly one data source");
    if (jobs == 0) throw ConfigError("protocol.jobs must be >= 1");
    arch.validate();
    train.validate();
  }

  const TrainConfig& config(Method m) const {
    auto it = overrides.find(m);
    return it == overrides.end() ? train : it->second;
  }
};

/// Dataset for one protocol seed. A synthetic family draws its teacher and
/// samples from the seed; a CSV source only reseeds the split when the
/// file has no split column.
inline Dataset protocol_dataset(const Protocol& p, std::uint64_t seed) {
  if (p.synthetic) {
    const auto& s = *p.synthetic;
    return generate(make_family(s.input_dim, s.rho, s.tasks, seed), s.n_samples, seed);
  }
  return load_csv(p.csv->path, p.csv->schema, seed);
}

class ResultTable {
 public:
  std::vector<RunResult> runs;

  /// Metric values of the successful runs of `m`, in seed order.
  std::vector<double> values(Method m, const std::string& metric) const {
    std::vector<double> out;
    for (const auto& r : runs)
      if (r.method == m && r.ok) out.push_back(r.metrics.at(metric));
    return out;
  }

  MeanStd aggregate(Method m, const std::string& metric) const { return mean_std(values(m, metric)); }

  /// Per-seed pairs (value of m, value of baseline) where both succeeded.
  std::pair<std::vector<double>, std::vector<double>> paired(Method m, Method baseline,
                                                             const std::string& metric) const {
    std::pair<std::vector<double>, std::vector<double>> out;
    for (const auto& a : runs) {
      if (a.method != m || !a.ok) continue;
      for (const auto& b : runs) {
        if (b.method == baseline && b.seed == a.seed && b.ok) {
          out.first.push_back(a.metrics.at(metric));
          out.second.push_back(b.metrics.at(metric));
        }
      }
    }
    return out;
  }

  std::vector<double> paired_differences(Method m, Method baseline, const std::string& metric) const {
    auto [a, b] = paired(m, baseline, metric);
    for (std::size_t i = 0; i < a.size(); ++i) a[i] -= b[i];
    return a;
  }

  /// Every method saw the same dataset for a given seed.
  bool paired_fair() const {
    std::map<std::uint64_t, std::uint64_t> by_seed;
    for (const auto& r : runs) {
      auto [it, fresh] = by_seed.emplace(r.seed, r.dataset_hash);
      if (!fresh && it->second != r.dataset_hash) return false;
    }
    return true;
  }

  std::vector<Method> methods() const {
    std::vector<Method> out;
    for (const auto& r : runs)
      if (std::find(out.begin(), out.end(), r.method) == out.end()) out.push_back(r.method);
    return out;
  }

  std::vector<std::string> metric_names() const {
    std::set<std::string> names;
    for (const auto& r : runs)
      for (const auto& [k, v] : r.metrics) names.insert(k);
    return {names.begin(), names.end()};
  }

  std::size_t failures() const {
    return static_cast<std::size_t>(std::count_if(runs.begin(), runs.end(), [](const auto& r) { return !r.ok; }));
  }
};

/// Runs every (method, seed) pair as an independent job, at most `jobs`
/// at a time. Results are ordered by method, then seed.
inline ResultTable run_protocol(const Protocol& p) {
  p.validate();
  std::vector<Dataset> datasets;
  for (auto seed : p.seeds) datasets.push_back(protocol_dataset(p, seed));
  struct Job {
    Method method;
    std::size_t seed_index;
  };
  std::vector<Job> jobs;
  for (auto m : p.methods)
    for (std::size_t s = 0; s < p.seeds.size(); ++s) jobs.push_back({m, s});
  ResultTable table;
  table.runs.resize(jobs.size());
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(jobs.size());
  auto worker = [&] {
    for (std::size_t i = next++; i < jobs.size(); i = next++) {
      const Job& j = jobs[i];
      try {
        table.runs[i] =
            run_method(j.method, p.arch, p.config(j.method), datasets[j.seed_index], p.seeds[j.seed_index]);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const std::size_t n_threads = std::min(p.jobs, jobs.size());
  if (n_threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < n_threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);
  if (!table.paired_fair()) throw InvariantViolation("paired_fairness", "methods saw different datasets for a seed");
  return table;
}

inline void write_csv(const ResultTable& t, std::ostream& out) {
  out << "method,seed,status,metric,value\n";
  for (const auto& r : t.runs) {
    if (!r.ok) {
      out << to_string(r.method) << ',' << r.seed << ",failed,,\n";
      continue;
    }
    for (const auto& [k, v] : r.metrics)
      out << to_string(r.method) << ',' << r.seed << ",ok," << k << ',' << format_double(v) << '\n';
  }
}

inline nlohmann::json to_json(const ResultTable& t) {
  nlohmann::json j;
  j["format"] = "auxnas.results/1";
  j["paired_fair"] = t.paired_fair();
  j["runs"] = nlohmann::json::array();
  for (const auto& r : t.runs) {
    nlohmann::json rj{{"method", to_string(r.method)},
                      {"seed", r.seed},
                      {"status", r.ok ? "ok" : "failed"},
                      {"dataset_hash", r.dataset_hash},
                      {"max_alpha_p", r.max_alpha_p},
                      {"inference_ops", r.inference_ops},
                      {"metrics", r.metrics}};
    if (!r.ok) rj["error"] = r.error;
    j["runs"].push_back(rj);
  }
  const bool has_single = std::any_of(t.runs.begin(), t.runs.end(), [](const auto& r) { return r.method == Method::single; });
  for (auto m : t.methods()) {
    nlohmann::json mj;
    for (const auto& metric : t.metric_names()) {
      const auto a = t.aggregate(m, metric);
      mj[metric] = {{"mean", a.mean}, {"std", a.std}, {"n", t.values(m, metric).size()}};
      if (has_single && m != Method::single) mj[metric]["diff_vs_single"] = t.paired_differences(m, Method::single, metric);
    }
    j["aggregates"][std::string(to_string(m))] = mj;
  }
  return j;
}

/// Whitespace-delimited per-epoch curves for gnuplot:
/// epoch L_P L_A val_L_P alphaP_max alphaP_mean alphaA_mean.
inline void write_gnuplot(const TrainReport& r, std::ostream& out) {
  out << "# " << r.method << "\n# epoch L_P L_A val_L_P alphaP_max alphaP_mean alphaA_mean\n";
  for (const auto& e : r.epochs) {
    out << e.epoch << ' ' << format_double(e.loss_p) << ' ' << format_double(e.loss_a) << ' '
        << format_double(e.val_loss_p) << ' ' << format_double(e.alpha_p.max) << ' ' << format_double(e.alpha_p.mean)
        << ' ' << format_double(e.alpha_a.mean) << '\n';
  }
}

/// Gradient only, gradient with connection search, and the full method.
inline constexpr Method kAblationGrid[] = {Method::aux_g_layer, Method::aux_nas_no_features, Method::aux_nas};

/// Seeds on which the ablation grid's primary metric never worsens along
/// the grid order.
inline std::size_t monotone_seeds(const ResultTable& t, const std::string& metric, bool lower_is_better) {
  std::size_t count = 0;
  std::set<std::uint64_t> seeds;
  for (const auto& r : t.runs) seeds.insert(r.seed);
  for (auto seed : seeds) {
    std::vector<double> v;
    for (auto m : kAblationGrid)
      for (const auto& r : t.runs)
        if (r.method == m && r.seed == seed && r.ok) v.push_back(r.metrics.at(metric));
    if (v.size() != std::size(kAblationGrid)) continue;
    bool ok = true;
    for (std::size_t i = 1; i < v.size(); ++i) ok = ok && (lower_is_better ? v[i] <= v[i - 1] : v[i] >= v[i - 1]);
    count += ok ? 1 : 0;
  }
  return count;
}

}  // namespace auxnas
