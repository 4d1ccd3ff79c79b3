// auxnas: train, prune, evaluate and compare primary-auxiliary networks.

#include <iostream>

#include <CLI11.hpp>

#include "auxnas/cli/commands.hpp"

using namespace auxnas;

int main(int argc, char** argv) {
  CLI::App app{"Asymmetric primary-auxiliary training with architecture-weight pruning"};
  app.require_subcommand(1);

  std::string config_path, model_path, out_path, data_path, manifest_file, split_name = "test";
  std::vector<std::string> overrides;
  std::size_t jobs = 0, batch = 1, count = 1;
  std::uint64_t seed = 0;
  double N = 100, M = 10, K = 1;

  auto* train_cmd = app.add_subcommand("train", "train one method on one seed");
  train_cmd->add_option("config", config_path, "JSON config")->required();
  train_cmd->add_option("--set", overrides, "override a key, e.g. arch.width=16");
  train_cmd->add_option("-o,--out", out_path, "output directory (default: output_dir)");

  auto* prune_cmd = app.add_subcommand("prune", "zero auxiliary-to-primary weights and drop unused parts");
  prune_cmd->add_option("model", model_path, "model JSON")->required();
  prune_cmd->add_option("-o,--out", out_path, "pruned model path (default: <model>.pruned.json)");

  auto* eval_cmd = app.add_subcommand("eval", "primary metrics of a model's inference network");
  eval_cmd->add_option("model", model_path, "model JSON")->required();
  eval_cmd->add_option("--data", data_path, "dataset CSV")->required();
  eval_cmd->add_option("--manifest", manifest_file, "dataset manifest (default: <data>.manifest.json)");
  eval_cmd->add_option("--split", split_name, "train, val or test");
  eval_cmd->add_option("-o,--out", out_path, "write metrics JSON here as well");

  auto* flops_cmd = app.add_subcommand("flops", "symbolic or measured inference cost");
  flops_cmd->add_option("model", model_path, "model JSON; measured cost when given");
  flops_cmd->add_option("--N", N, "backbone cost");
  flops_cmd->add_option("--M", M, "fusion cost");
  flops_cmd->add_option("--K", K, "auxiliary task count");
  flops_cmd->add_option("--batch", batch, "batch rows for measured cost");

  auto* grad_cmd = app.add_subcommand("gradcheck", "finite-difference self check");
  grad_cmd->add_option("--seed", seed, "first seed");
  grad_cmd->add_option("--count", count, "number of seeds");

  auto* proto_cmd = app.add_subcommand("protocol", "compare methods over paired seeds");
  proto_cmd->add_option("config", config_path, "JSON config")->required();
  proto_cmd->add_option("--set", overrides, "override a key");
  proto_cmd->add_option("--jobs", jobs, "worker threads (default: config jobs)");
  proto_cmd->add_option("-o,--out", out_path, "output directory (default: output_dir)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    json result;
    if (*train_cmd) {
      const ExperimentConfig cfg = load_config(config_path, overrides);
      result = cmd_train(cfg, out_path.empty() ? cfg.output_dir : out_path);
    } else if (*prune_cmd) {
      result = cmd_prune(model_path, out_path.empty() ? fs::path(model_path).replace_extension(".pruned.json") : fs::path(out_path));
    } else if (*eval_cmd) {
      const fs::path manifest_p = manifest_file.empty() ? manifest_path_for(data_path) : fs::path(manifest_file);
      result = cmd_eval(model_path, data_path, manifest_p, split_from_string(split_name));
      if (!out_path.empty()) write_json_file(out_path, result);
    } else if (*flops_cmd) {
      result = model_path.empty() ? cmd_flops_symbolic(N, M, K) : cmd_flops_model(model_path, batch);
    } else if (*grad_cmd) {
      bool pass = false;
      result = cmd_gradcheck(seed, count, pass);
      std::cout << "max_rel_error " << result["max_rel_error"].get<double>() << (pass ? " PASS" : " FAIL") << '\n';
      if (!pass) throw InvariantViolation("gradient_check", "relative error above tolerance");
      return kExitOk;
    } else if (*proto_cmd) {
      ExperimentConfig cfg = load_config(config_path, overrides);
      if (jobs > 0) cfg.jobs = jobs;
      result = cmd_protocol(cfg, out_path.empty() ? cfg.output_dir : out_path);
      result.erase("runs");
    }
    std::cout << result.dump(2) << '\n';
    return kExitOk;
  } catch (...) {
    return report_exception(std::cerr);
  }
}
