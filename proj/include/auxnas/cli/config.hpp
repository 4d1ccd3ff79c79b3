#pragma once

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "auxnas/evalbench/protocol.hpp"

namespace auxnas {

using nlohmann::json;

/// Every accepted key with its default. Anything else is rejected.
inline const json& config_defaults() {
  static const json d = json::parse(R"({
    "mode": "aux_nas",
    "seed": 0,
    "seeds": [0, 1, 2, 3, 4],
    "methods": ["single", "aux_g_layer", "aux_nas"],
    "jobs": 1,
    "output_dir": "out",
    "arch": {
      "n_layers": 4, "width": 32, "aux_tasks": 1, "window": 3, "stage_size": 2,
      "alpha_init": 0.5, "width_adapters": false
    },
    "training": {
      "epochs": 10, "alternating_epochs": 0, "batch_size": 32, "timing": false, "track_validation": true
    },
    "optimizer": {
      "kind": "sgd_momentum", "lr_w": 0.01, "lr_alpha": 0.01, "momentum": 0.9,
      "beta1": 0.9, "beta2": 0.999, "adam_eps": 1e-8, "proximal": false
    },
    "schedule": {"ramp": "linear", "lambda_start": 0.0, "lambda_end": 100.0},
    "data": {
      "source": "synthetic", "input_dim": 16, "rho": 0.9, "n_samples": 4000,
      "tasks": [
        {"name": "primary", "kind": "regression", "dim": 1, "loss": "auto", "noise_std": 0.1, "label_flip": 0.0},
        {"name": "aux0", "kind": "regression", "dim": 1, "loss": "auto", "noise_std": 0.1, "label_flip": 0.0}
      ],
      "csv": "", "manifest": ""
    }
  })");
  return d;
}

inline const json& task_defaults() { return config_defaults()["data"]["tasks"][0]; }

namespace detail {

inline std::string kind_name(const json& j) {
  if (j.is_boolean()) return "boolean";
  if (j.is_number_integer() || j.is_number_unsigned()) return "integer";
  if (j.is_number()) return "number";
  if (j.is_string()) return "string";
  if (j.is_array()) return "array";
  if (j.is_object()) return "object";
  return "null";
}

inline bool same_kind(const json& want, const json& got) {
  if (want.is_number_float()) return got.is_number();
  if (want.is_number_integer() || want.is_number_unsigned()) return got.is_number_unsigned() || (got.is_number_integer() && got.get<std::int64_t>() >= 0);
  return kind_name(want) == kind_name(got);
}

/// Overlays `user` on `base`, rejecting keys that `base` does not have and
/// values of the wrong kind. Arrays replace wholesale; task lists are
/// checked element by element.
inline void merge_checked(json& base, const json& user, const std::string& path) {
  if (!user.is_object()) throw ConfigError((path.empty() ? "config" : path) + ": expected an object");
  for (const auto& [key, value] : user.items()) {
    const std::string where = path.empty() ? key : path + "." + key;
    if (!base.contains(key)) throw ConfigError("unknown config key '" + where + "'");
    json& slot = base[key];
    if (slot.is_object()) {
      merge_checked(slot, value, where);
    } else if (where == "data.tasks") {
      if (!value.is_array() || value.empty()) throw ConfigError("data.tasks: expected a non-empty array");
      json tasks = json::array();
      for (std::size_t i = 0; i < value.size(); ++i) {
        json t = task_defaults();
        t["name"] = i == 0 ? "primary" : "aux" + std::to_string(i - 1);
        merge_checked(t, value[i], where + "[" + std::to_string(i) + "]");
        tasks.push_back(t);
      }
      slot = tasks;
    } else {
      if (!same_kind(slot, value)) {
        throw ConfigError(where + ": expected " + kind_name(slot) + ", got " + kind_name(value));
      }
      slot = value;
    }
  }
}

}  // namespace detail

/// Applies one `dotted.path=value` override. The value is read as JSON
/// when it parses, otherwise as a string.
inline void apply_override(json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + assignment + "' is not key=value");
  const std::string path = assignment.substr(0, eq), text = assignment.substr(eq + 1);
  json value = json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;
  json patch = value;
  std::string rest = path;
  std::vector<std::string> parts;
  for (std::size_t pos; (pos = rest.find('.')) != std::string::npos; rest = rest.substr(pos + 1)) {
    parts.push_back(rest.substr(0, pos));
  }
  parts.push_back(rest);
  for (auto it = parts.rbegin(); it != parts.rend(); ++it) patch = json{{*it, patch}};
  detail::merge_checked(doc, patch, "");
}

struct ExperimentConfig {
  json doc;  // fully resolved document
  Method method = Method::aux_nas;
  std::uint64_t seed = 0;
  std::vector<std::uint64_t> seeds;
  std::vector<Method> methods;
  std::size_t jobs = 1;
  std::string output_dir;
  ArchConfig arch;
  TrainConfig train;
  std::size_t alternating_epochs = 0;  // epochs for aux_nas methods, 0 = same as train.epochs
  std::optional<SyntheticSource> synthetic;
  std::optional<CsvSource> csv;

  Protocol protocol() const {
    Protocol p;
    p.methods = methods;
    p.seeds = seeds;
    p.synthetic = synthetic;
    p.csv = csv;
    p.arch = arch;
    p.train = train;
    p.jobs = jobs;
    for (auto m : methods)
      if (mode_of(m) == Mode::aux_nas) p.overrides[m] = train_config(m);
    return p;
  }

  TrainConfig train_config(Method m) const {
    TrainConfig t = train;
    if (mode_of(m) == Mode::aux_nas && alternating_epochs > 0) t.epochs = alternating_epochs;
    return t;
  }

  /// The dataset for `seed` (train and eval share it).
  Dataset dataset(std::uint64_t s) const { return protocol_dataset(protocol(), s); }
};

inline TaskDef task_from_json(const json& t, const std::string& where) {
  TaskDef d;
  d.name = t["name"].get<std::string>();
  const std::string kind = t["kind"].get<std::string>();
  if (kind == "regression") {
    d.head.kind = HeadKind::regression;
  } else if (kind == "classification") {
    d.head.kind = HeadKind::classification;
  } else {
    throw ConfigError(where + ".kind: unknown task kind '" + kind + "'");
  }
  d.head.out_dim = t["dim"].get<std::size_t>();
  const std::string loss = t["loss"].get<std::string>();
  if (loss == "auto") {
    d.head.loss = d.head.kind == HeadKind::classification ? LossKind::cross_entropy : LossKind::mse;
  } else if (loss == "mse") {
    d.head.loss = LossKind::mse;
  } else if (loss == "cosine") {
    d.head.loss = LossKind::cosine;
  } else if (loss == "cross_entropy") {
    d.head.loss = LossKind::cross_entropy;
  } else {
    throw ConfigError(where + ".loss: unknown loss '" + loss + "'");
  }
  d.head.validate(where);
  d.noise_std = t["noise_std"].get<double>();
  d.label_flip = t["label_flip"].get<double>();
  return d;
}

/// Resolves defaults, file contents, overrides, and AUXNAS_SEED, in that
/// order, then validates every field.
inline ExperimentConfig resolve_config(const json& user, const std::vector<std::string>& overrides = {},
                                       const char* env_seed = std::getenv("AUXNAS_SEED")) {
  ExperimentConfig c;
  c.doc = config_defaults();
  detail::merge_checked(c.doc, user, "");
  for (const auto& o : overrides) apply_override(c.doc, o);
  if (env_seed && *env_seed) {
    const auto v = parse_double(env_seed);
    if (!v || *v < 0 || *v != std::floor(*v)) throw ConfigError("AUXNAS_SEED must be a non-negative integer");
    c.doc["seed"] = static_cast<std::uint64_t>(*v);
  }
  const json& d = c.doc;
  c.method = method_from_string(d["mode"].get<std::string>());
  c.seed = d["seed"].get<std::uint64_t>();
  for (const auto& s : d["seeds"]) {
    if (!s.is_number_unsigned()) throw ConfigError("seeds: expected non-negative integers");
    c.seeds.push_back(s.get<std::uint64_t>());
  }
  for (const auto& m : d["methods"]) {
    if (!m.is_string()) throw ConfigError("methods: expected method names");
    c.methods.push_back(method_from_string(m.get<std::string>()));
  }
  c.jobs = d["jobs"].get<std::size_t>();
  c.output_dir = d["output_dir"].get<std::string>();

  const json& a = d["arch"];
  c.arch.n_layers = a["n_layers"].get<std::size_t>();
  c.arch.width = a["width"].get<std::size_t>();
  c.arch.aux_tasks = a["aux_tasks"].get<std::size_t>();
  c.arch.window = a["window"].get<std::size_t>();
  c.arch.stage_size = a["stage_size"].get<std::size_t>();
  c.arch.alpha_init = a["alpha_init"].get<double>();
  c.arch.width_adapters = a["width_adapters"].get<bool>();
  c.arch.validate();

  const json& t = d["training"];
  c.train.epochs = t["epochs"].get<std::size_t>();
  c.alternating_epochs = t["alternating_epochs"].get<std::size_t>();
  c.train.batch_size = t["batch_size"].get<std::size_t>();
  c.train.timing = t["timing"].get<bool>();
  c.train.track_validation = t["track_validation"].get<bool>();
  const json& o = d["optimizer"];
  c.train.optim.kind = optim_kind_from_string(o["kind"].get<std::string>());
  c.train.optim.lr_w = o["lr_w"].get<double>();
  c.train.optim.lr_alpha = o["lr_alpha"].get<double>();
  c.train.optim.momentum = o["momentum"].get<double>();
  c.train.optim.beta1 = o["beta1"].get<double>();
  c.train.optim.beta2 = o["beta2"].get<double>();
  c.train.optim.adam_eps = o["adam_eps"].get<double>();
  c.train.optim.proximal = o["proximal"].get<bool>();
  const json& s = d["schedule"];
  c.train.schedule.shape = ramp_shape_from_string(s["ramp"].get<std::string>());
  c.train.schedule.start = s["lambda_start"].get<double>();
  c.train.schedule.end = s["lambda_end"].get<double>();
  c.train.validate();

  const json& data = d["data"];
  const std::string source = data["source"].get<std::string>();
  if (source == "synthetic") {
    SyntheticSource syn;
    syn.input_dim = data["input_dim"].get<std::size_t>();
    syn.rho = data["rho"].get<double>();
    syn.n_samples = data["n_samples"].get<std::size_t>();
    for (std::size_t i = 0; i < data["tasks"].size(); ++i) {
      syn.tasks.push_back(task_from_json(data["tasks"][i], "data.tasks[" + std::to_string(i) + "]"));
    }
    if (!(syn.rho >= 0.0 && syn.rho <= 1.0)) throw ConfigError("data.rho must lie in [0, 1]");
    if (syn.n_samples < 30) throw ConfigError("data.n_samples must be >= 30");
    c.synthetic = syn;
  } else if (source == "csv") {
    const std::string path = data["csv"].get<std::string>();
    if (path.empty() || !std::filesystem::exists(path)) throw ConfigError("data.csv: file '" + path + "' not found");
    std::string manifest_path = data["manifest"].get<std::string>();
    if (manifest_path.empty()) manifest_path = std::filesystem::path(path).replace_extension(".manifest.json").string();
    if (!std::filesystem::exists(manifest_path)) {
      throw ConfigError("data.manifest: file '" + manifest_path + "' not found");
    }
    std::ifstream in(manifest_path);
    json m = json::parse(in, nullptr, false);
    if (m.is_discarded()) throw SchemaError("data.manifest: '" + manifest_path + "' is not valid JSON");
    c.csv = CsvSource{path, schema_from_manifest(m)};
  } else {
    throw ConfigError("data.source: expected 'synthetic' or 'csv', got '" + source + "'");
  }
  return c;
}

inline json read_json_file(const std::string& path) {
  if (!std::filesystem::exists(path)) throw ConfigError("file '" + path + "' not found");
  std::ifstream in(path);
  json j = json::parse(in, nullptr, false);
  if (j.is_discarded()) throw ConfigError("'" + path + "' is not valid JSON");
  return j;
}

inline ExperimentConfig load_config(const std::string& path, const std::vector<std::string>& overrides = {}) {
  return resolve_config(read_json_file(path), overrides);
}

}  // namespace auxnas
