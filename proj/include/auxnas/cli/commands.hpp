#pragma once

#include <filesystem>
#include <fstream>
#include <ostream>
#include <string>

#include "auxnas/archnet/flops.hpp"
#include "auxnas/archnet/self_check.hpp"
#include "auxnas/archnet/serialize.hpp"
#include "auxnas/cli/config.hpp"
#include "auxnas/evalbench/stats.hpp"

namespace auxnas {

namespace fs = std::filesystem;

enum ExitCode : int { kExitOk = 0, kExitFailure = 1, kExitConfig = 2, kExitDivergence = 3, kExitInvariant = 4 };

/// Maps the active exception to an exit code and prints a diagnostic.
inline int report_exception(std::ostream& err) {
  try {
    throw;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const SchemaError& e) {
    err << "schema error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const ParseError& e) {
    err << "parse error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const DivergenceError& e) {
    err << "divergence: " << e.what() << '\n';
    return kExitDivergence;
  } catch (const NonFiniteError& e) {
    err << "divergence: " << e.what() << '\n';
    return kExitDivergence;
  } catch (const InvariantViolation& e) {
    err << "invariant violated: " << e.name() << ": " << e.what() << '\n';
    return kExitInvariant;
  } catch (const ContractViolation& e) {
    err << "invariant violated: contract: " << e.what() << '\n';
    return kExitInvariant;
  } catch (const DimensionError& e) {
    err << "invariant violated: dimension: " << e.what() << '\n';
    return kExitInvariant;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitFailure;
  }
}

inline std::ofstream open_out(const fs::path& p) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary);
  if (!out) throw ConfigError("cannot write '" + p.string() + "'");
  return out;
}

inline void write_json_file(const fs::path& p, const json& j) { open_out(p) << j.dump(2) << '\n'; }

inline fs::path manifest_path_for(const fs::path& csv) {
  fs::path m = csv;
  return m.replace_extension(".manifest.json");
}

/// Trains the configured method on the dataset of `cfg.seed` and writes
/// model.json, report.json, steps.csv, curves.dat, the dataset (CSV and
/// manifest), and the resolved config into `out_dir`.
inline json cmd_train(const ExperimentConfig& cfg, const fs::path& out_dir) {
  const Dataset data = cfg.dataset(cfg.seed);
  AuxNetwork net = build_for(cfg.method, cfg.arch, data, cfg.seed);
  const TrainReport report = [&] {
    TrainReport r = train(net, data, config_for(cfg.method, cfg.train_config(cfg.method), cfg.seed));
    r.method = std::string(to_string(cfg.method));
    return r;
  }();
  fs::create_directories(out_dir);
  save_network(net, (out_dir / "model.json").string());
  write_json_file(out_dir / "report.json", to_json(report));
  {
    auto out = open_out(out_dir / "steps.csv");
    write_steps_csv(report, out);
  }
  {
    auto out = open_out(out_dir / "curves.dat");
    write_gnuplot(report, out);
  }
  write_csv(data, (out_dir / "dataset.csv").string());
  write_json_file(out_dir / "dataset.manifest.json", manifest(data));
  write_json_file(out_dir / "config.resolved.json", cfg.doc);
  return {{"method", to_string(cfg.method)},
          {"seed", cfg.seed},
          {"steps", report.steps.size()},
          {"final_R", report.final_reg()},
          {"max_alpha_p", max_alpha_p(net)},
          {"output_dir", out_dir.string()}};
}

/// Hard-zeroes the auxiliary-to-primary weights of a search network and
/// removes everything the primary output no longer needs.
inline json cmd_prune(const fs::path& model, const fs::path& out) {
  AuxNetwork net = load_network(model.string());
  const std::size_t before = net.params.count_values();
  double zeroed = 0.0;
  if (net.mode == Mode::aux_nas) zeroed = hard_zero_alpha_p(net);
  AuxNetwork pruned = inference_network(net);
  if (pruned.mode != Mode::pruned) throw ConfigError("a " + std::string(to_string(net.mode)) + " network cannot be pruned");
  save_network(pruned, out.string());
  return {{"input", model.string()},
          {"output", out.string()},
          {"mode", to_string(net.mode)},
          {"max_alpha_p_zeroed", zeroed},
          {"params_before", before},
          {"params_after", pruned.params.count_values()}};
}

inline Dataset load_dataset_files(const fs::path& csv, const fs::path& manifest_file) {
  if (!fs::exists(csv)) throw ConfigError("dataset '" + csv.string() + "' not found");
  const json m = read_json_file(manifest_file.string());
  return load_csv(csv.string(), schema_from_manifest(m), m.value("seed", std::uint64_t{0}));
}

/// Metrics of the model's inference network on one split.
inline json cmd_eval(const fs::path& model, const fs::path& csv, const fs::path& manifest_file, Split split) {
  const AuxNetwork net = load_network(model.string());
  const Dataset data = load_dataset_files(csv, manifest_file);
  const Evaluation e = evaluate(inference_network(net), data, split);
  return {{"format", "auxnas.metrics/1"},
          {"model_mode", to_string(net.mode)},
          {"split", to_string(split)},
          {"rows", data.indices(split).size()},
          {"metrics", e.metrics},
          {"loss", e.loss},
          {"inference_ops", e.forward_ops}};
}

inline json cmd_flops_symbolic(double N, double M, double K) {
  json j{{"N", N}, {"M", M}, {"K", K}};
  for (auto m : {CostMethod::ours, CostMethod::soft_mtl, CostMethod::hard_attention}) {
    j[std::string(to_string(m))] = symbolic_flops({N, M, K}, m).upper;
  }
  const auto ada = symbolic_flops({N, M, K}, CostMethod::adashare_bound);
  j[std::string(to_string(CostMethod::adashare_bound))] = {ada.lower, ada.upper};
  return j;
}

inline json cmd_flops_model(const fs::path& model, std::size_t batch) {
  const AuxNetwork net = load_network(model.string());
  const AuxNetwork inf = inference_network(net);
  const MeasuredFlops full = measure_inference(net, batch), pruned = measure_inference(inf, batch),
                      single = measure_single_task(inf, batch);
  return {{"mode", to_string(net.mode)},
          {"batch", batch},
          {"as_built", {{"forward", full.forward}, {"by_kind", full.by_kind}}},
          {"inference", {{"forward", pruned.forward}, {"by_kind", pruned.by_kind}}},
          {"single_task", single.forward},
          {"fused_layer_overhead", fused_layer_overhead(inf, batch)},
          {"projection_ops", pruned.kind("projection")}};
}

inline json cmd_gradcheck(std::uint64_t seed, std::size_t count, bool& pass) {
  json j{{"tolerance", 1e-4}, {"eps", kGradCheckEps}, {"runs", json::array()}};
  double worst = 0.0;
  pass = true;
  for (std::size_t i = 0; i < count; ++i) {
    const SelfCheckReport r = gradcheck_suite(seed + i);
    json run{{"seed", r.seed}, {"pass", r.pass}, {"max_rel_error", r.max_rel_error}, {"checks", json::object()}};
    for (const auto& l : r.lines) {
      run["checks"][l.name] = {{"max_rel_error", l.result.max_rel_error}, {"coordinates", l.result.coordinates}};
    }
    worst = std::max(worst, r.max_rel_error);
    pass = pass && r.pass;
    j["runs"].push_back(run);
  }
  j["pass"] = pass;
  j["max_rel_error"] = worst;
  return j;
}

/// Runs the comparison protocol and writes results.csv, results.json and
/// one curve file per run.
inline json cmd_protocol(const ExperimentConfig& cfg, const fs::path& out_dir) {
  const Protocol p = cfg.protocol();
  const ResultTable t = run_protocol(p);
  fs::create_directories(out_dir);
  {
    auto out = open_out(out_dir / "results.csv");
    write_csv(t, out);
  }
  json j = to_json(t);
  const HeadSpec head = p.synthetic ? p.synthetic->tasks.at(0).head : p.csv->schema.tasks.at(0).head;
  const auto [metric, lower_better] = primary_metric(head);
  const bool has_single = std::find(p.methods.begin(), p.methods.end(), Method::single) != p.methods.end();
  for (auto m : p.methods) {
    if (!has_single || m == Method::single) continue;
    auto [a, b] = t.paired(m, Method::single, metric);
    if (a.size() < 2) continue;
    const PairedTest test = lower_better ? paired_t_test(a, b) : paired_t_test(b, a);
    j["paired_vs_single"][std::string(to_string(m))] = {
        {"metric", metric}, {"n", test.n}, {"mean_diff", test.mean_diff}, {"t", test.t}, {"p_one_sided", test.p}};
  }
  write_json_file(out_dir / "results.json", j);
  for (const auto& r : t.runs) {
    auto out = open_out(out_dir / "curves" / (std::string(to_string(r.method)) + "_seed" + std::to_string(r.seed) + ".dat"));
    write_gnuplot(r.report, out);
  }
  return j;
}

}  // namespace auxnas
