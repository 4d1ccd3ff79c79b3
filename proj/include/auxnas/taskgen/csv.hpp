#pragma once

#include <cmath>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "auxnas/taskgen/family.hpp"
#include "auxnas/util/format.hpp"

namespace auxnas {

inline constexpr const char* kDatasetFormat = "auxnas.dataset/1";

struct TaskColumns {
  std::string name;
  HeadSpec head;
  std::vector<std::string> columns;  // one column for classification
};

/// Column roles of a tabular dataset. An empty `split_column` means the
/// file has no split tags and a seeded 70/15/15 split is drawn on load.
struct CsvSchema {
  std::vector<std::string> input_columns;
  std::vector<TaskColumns> tasks;
  std::string split_column;
};

inline CsvSchema schema_of(const Dataset& d) {
  CsvSchema s;
  for (std::size_t i = 0; i < d.input_dim(); ++i) s.input_columns.push_back("x" + std::to_string(i));
  for (const auto& t : d.tasks) {
    TaskColumns tc{t.name, t.head, {}};
    if (t.head.kind == HeadKind::classification) {
      tc.columns.push_back(t.name);
    } else {
      for (std::size_t c = 0; c < t.head.out_dim; ++c) tc.columns.push_back(t.name + "_" + std::to_string(c));
    }
    s.tasks.push_back(std::move(tc));
  }
  s.split_column = "split";
  return s;
}

inline void write_csv(const Dataset& d, std::ostream& out) {
  const CsvSchema s = schema_of(d);
  std::string line;
  auto sep = [&line] {
    if (!line.empty()) line += ',';
  };
  for (const auto& c : s.input_columns) { sep(); line += c; }
  for (const auto& t : s.tasks)
    for (const auto& c : t.columns) { sep(); line += c; }
  sep();
  line += s.split_column;
  out << line << '\n';
  for (std::size_t r = 0; r < d.size(); ++r) {
    line.clear();
    for (std::size_t c = 0; c < d.input_dim(); ++c) { sep(); line += format_double(d.inputs(r, c)); }
    for (const auto& t : d.tasks)
      for (std::size_t c = 0; c < t.labels.cols(); ++c) { sep(); line += format_double(t.labels(r, c)); }
    sep();
    line += to_string(d.split[r]);
    out << line << '\n';
  }
}

inline void write_csv(const Dataset& d, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write '" + path + "'");
  write_csv(d, out);
}

inline nlohmann::json manifest(const Dataset& d) {
  const CsvSchema s = schema_of(d);
  nlohmann::json j;
  j["format"] = kDatasetFormat;
  j["seed"] = d.seed;
  j["rho"] = d.rho;
  j["n_samples"] = d.size();
  j["input_dim"] = d.input_dim();
  j["input_columns"] = s.input_columns;
  j["split_column"] = s.split_column;
  j["split_sizes"] = {{"train", d.indices(Split::train).size()},
                      {"val", d.indices(Split::val).size()},
                      {"test", d.indices(Split::test).size()}};
  j["tasks"] = nlohmann::json::array();
  for (const auto& t : s.tasks) {
    j["tasks"].push_back({{"name", t.name},
                          {"kind", to_string(t.head.kind)},
                          {"dim", t.head.out_dim},
                          {"loss", to_string(t.head.loss)},
                          {"columns", t.columns}});
  }
  return j;
}

inline CsvSchema schema_from_manifest(const nlohmann::json& j) {
  try {
    if (j.at("format").get<std::string>() != kDatasetFormat) {
      throw SchemaError("unsupported dataset manifest format");
    }
    CsvSchema s;
    s.input_columns = j.at("input_columns").get<std::vector<std::string>>();
    s.split_column = j.value("split_column", std::string());
    for (const auto& t : j.at("tasks")) {
      TaskColumns tc;
      tc.name = t.at("name").get<std::string>();
      tc.head.kind = head_kind_from_string(t.at("kind").get<std::string>());
      tc.head.out_dim = t.at("dim").get<std::size_t>();
      tc.head.loss = loss_kind_from_string(t.at("loss").get<std::string>());
      tc.columns = t.at("columns").get<std::vector<std::string>>();
      s.tasks.push_back(std::move(tc));
    }
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("dataset manifest: ") + e.what());
  }
}

namespace detail {

inline std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (std::size_t i = 0; i <= line.size(); ++i) {
    if (i == line.size() || line[i] == ',') {
      out.push_back(line.substr(start, i - start));
      start = i + 1;
    }
  }
  return out;
}

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

}  // namespace detail

/// Reads a header-row CSV. Columns are located by name through `schema`;
/// extra columns are ignored.
inline Dataset load_csv(std::istream& in, const CsvSchema& schema, std::uint64_t split_seed = 0) {
  if (schema.input_columns.empty()) throw SchemaError("schema lists no input columns");
  if (schema.tasks.empty()) throw SchemaError("schema lists no tasks");
  std::string line;
  if (!std::getline(in, line)) throw ParseError(1, "missing header row");
  std::map<std::string, std::size_t> col;
  const std::size_t n_fields = detail::split_fields(line).size();
  {
    const auto fields = detail::split_fields(line);
    for (std::size_t i = 0; i < fields.size(); ++i) {
      if (!col.emplace(std::string(detail::trim(fields[i])), i).second) {
        throw ParseError(1, "duplicate column '" + std::string(detail::trim(fields[i])) + "'");
      }
    }
  }
  auto locate = [&](const std::string& name) {
    auto it = col.find(name);
    if (it == col.end()) throw SchemaError("missing column '" + name + "'");
    return it->second;
  };
  std::vector<std::size_t> in_idx;
  for (const auto& c : schema.input_columns) in_idx.push_back(locate(c));
  std::vector<std::vector<std::size_t>> task_idx;
  for (const auto& t : schema.tasks) {
    try {
      t.head.validate("task '" + t.name + "'");
    } catch (const ConfigError& e) {
      throw SchemaError(e.what());
    }
    const std::size_t want = t.head.kind == HeadKind::classification ? 1 : t.head.out_dim;
    if (t.columns.size() != want) {
      throw SchemaError("task '" + t.name + "' lists " + std::to_string(t.columns.size()) + " columns, expected " +
                        std::to_string(want));
    }
    std::vector<std::size_t> idx;
    for (const auto& c : t.columns) idx.push_back(locate(c));
    task_idx.push_back(std::move(idx));
  }
  const bool has_split = !schema.split_column.empty();
  const std::size_t split_idx = has_split ? locate(schema.split_column) : 0;

  std::vector<double> xs;
  std::vector<std::vector<double>> ys(schema.tasks.size());
  std::vector<Split> split;
  std::size_t line_no = 1, rows = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (detail::trim(line).empty()) continue;
    const auto fields = detail::split_fields(line);
    if (fields.size() != n_fields) {
      throw ParseError(line_no, std::to_string(fields.size()) + " fields, header has " + std::to_string(n_fields));
    }
    auto number = [&](std::size_t i) {
      auto v = parse_double(detail::trim(fields[i]));
      if (!v || !std::isfinite(*v)) {
        throw ParseError(line_no, "column " + std::to_string(i + 1) + ": '" + std::string(fields[i]) +
                                      "' is not a finite number");
      }
      return *v;
    };
    for (auto i : in_idx) xs.push_back(number(i));
    for (std::size_t t = 0; t < schema.tasks.size(); ++t) {
      for (auto i : task_idx[t]) {
        const double v = number(i);
        if (schema.tasks[t].head.kind == HeadKind::classification) {
          if (v != std::floor(v) || v < 0 || v >= static_cast<double>(schema.tasks[t].head.out_dim)) {
            throw ParseError(line_no, "class label " + std::string(fields[i]) + " outside [0, " +
                                          std::to_string(schema.tasks[t].head.out_dim) + ")");
          }
        }
        ys[t].push_back(v);
      }
    }
    if (has_split) {
      try {
        split.push_back(split_from_string(detail::trim(fields[split_idx])));
      } catch (const SchemaError& e) {
        throw ParseError(line_no, e.what());
      }
    }
    ++rows;
  }
  if (rows == 0) throw ParseError(line_no, "no data rows");

  Dataset d;
  d.seed = split_seed;
  d.inputs = Tensor({rows, in_idx.size()}, std::move(xs));
  for (std::size_t t = 0; t < schema.tasks.size(); ++t) {
    d.tasks.push_back({schema.tasks[t].name, schema.tasks[t].head,
                       Tensor({rows, task_idx[t].size()}, std::move(ys[t]))});
  }
  if (has_split) {
    d.split = std::move(split);
  } else {
    Rng rng = substream(split_seed, "split");
    d.split = make_splits(rows, rng);
  }
  return d;
}

inline Dataset load_csv(const std::string& path, const CsvSchema& schema, std::uint64_t split_seed = 0) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open data file '" + path + "'");
  return load_csv(in, schema, split_seed);
}

}  // namespace auxnas
