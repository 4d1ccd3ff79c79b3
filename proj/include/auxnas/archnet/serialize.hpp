#pragma once

#include <fstream>
#include <sstream>
#include <string>

#include <json.hpp>

#include "auxnas/archnet/network.hpp"
#include "auxnas/util/base64.hpp"

namespace auxnas {

inline constexpr const char* kNetworkFormat = "auxnas.network/1";

namespace detail {

inline nlohmann::json tensor_to_json(const Tensor& t) {
  return {{"shape", t.shape()}, {"data", base64::encode_doubles(t.storage())}};
}

inline Tensor tensor_from_json(const nlohmann::json& j) {
  return Tensor(j.at("shape").get<Shape>(), base64::decode_doubles(j.at("data").get<std::string>()));
}

inline nlohmann::json branch_to_json(const BranchSpec& b) {
  return {{"n_layers", b.n_layers},
          {"layer_widths", b.layer_widths},
          {"head",
           {{"kind", to_string(b.head.kind)},
            {"out_dim", b.head.out_dim},
            {"loss", to_string(b.head.loss)}}}};
}

inline BranchSpec branch_from_json(const nlohmann::json& j) {
  BranchSpec b;
  b.n_layers = j.at("n_layers").get<std::size_t>();
  b.layer_widths = j.at("layer_widths").get<std::vector<std::size_t>>();
  const auto& h = j.at("head");
  b.head.kind = head_kind_from_string(h.at("kind").get<std::string>());
  b.head.out_dim = h.at("out_dim").get<std::size_t>();
  b.head.loss = loss_kind_from_string(h.at("loss").get<std::string>());
  return b;
}

}  // namespace detail

inline nlohmann::json network_to_json(const AuxNetwork& net) {
  nlohmann::json j;
  j["format"] = kNetworkFormat;
  j["mode"] = to_string(net.mode);
  j["input_dim"] = net.input_dim;
  j["primary"] = detail::branch_to_json(net.primary);
  j["auxiliaries"] = nlohmann::json::array();
  for (const auto& a : net.auxiliaries) j["auxiliaries"].push_back(detail::branch_to_json(a));
  j["options"] = {{"window", net.options.window},
                  {"granularity", to_string(net.options.granularity)},
                  {"stage_size", net.options.stage_size},
                  {"width_adapters", net.options.width_adapters},
                  {"alpha_init", net.options.alpha_init}};
  j["connections"] = nlohmann::json::array();
  for (const auto& c : net.connections) {
    nlohmann::json cj{{"direction", to_string(c.direction)},
                      {"aux_task", c.aux_task},
                      {"src_layer", c.src_layer},
                      {"dst_layer", c.dst_layer}};
    if (c.arch_weight.empty()) {
      cj["indicator"] = 1;
    } else {
      cj["arch_weight"] = c.arch_weight;
      cj["alpha"] = net.params.value(c.arch_weight).item();
    }
    j["connections"].push_back(cj);
  }
  j["params"] = nlohmann::json::object();
  for (const auto& [name, e] : net.params) {
    auto pj = detail::tensor_to_json(e.value);
    pj["group"] = to_string(e.group);
    pj["owner"] = e.owner;
    j["params"][name] = pj;
  }
  j["norm_stats"] = nlohmann::json::object();
  for (const auto& [key, s] : net.norm_stats) {
    j["norm_stats"][key] = {{"mean", detail::tensor_to_json(s.mean)},
                            {"var", detail::tensor_to_json(s.var)}};
  }
  return j;
}

inline AuxNetwork network_from_json(const nlohmann::json& j) {
  try {
    if (j.at("format").get<std::string>() != kNetworkFormat) {
      throw SchemaError("unsupported network format '" + j.at("format").get<std::string>() + "'");
    }
    AuxNetwork net;
    net.mode = mode_from_string(j.at("mode").get<std::string>());
    net.input_dim = j.at("input_dim").get<std::size_t>();
    net.primary = detail::branch_from_json(j.at("primary"));
    for (const auto& a : j.at("auxiliaries")) net.auxiliaries.push_back(detail::branch_from_json(a));
    const auto& o = j.at("options");
    net.options.mode = net.mode;
    net.options.window = o.at("window").get<std::size_t>();
    net.options.granularity = granularity_from_string(o.at("granularity").get<std::string>());
    net.options.stage_size = o.at("stage_size").get<std::size_t>();
    net.options.width_adapters = o.at("width_adapters").get<bool>();
    net.options.alpha_init = o.at("alpha_init").get<double>();
    for (const auto& cj : j.at("connections")) {
      Connection c;
      c.direction = direction_from_string(cj.at("direction").get<std::string>());
      c.aux_task = cj.at("aux_task").get<std::size_t>();
      c.src_layer = cj.at("src_layer").get<std::size_t>();
      c.dst_layer = cj.at("dst_layer").get<std::size_t>();
      if (cj.contains("arch_weight")) c.arch_weight = cj.at("arch_weight").get<std::string>();
      net.connections.push_back(c);
    }
    for (const auto& [name, pj] : j.at("params").items()) {
      net.params.add(name, param_group_from_string(pj.at("group").get<std::string>()),
                     pj.at("owner").get<int>(), detail::tensor_from_json(pj));
    }
    for (const auto& [key, sj] : j.at("norm_stats").items()) {
      net.norm_stats.emplace(key, RunningStats{detail::tensor_from_json(sj.at("mean")),
                                               detail::tensor_from_json(sj.at("var"))});
    }
    validate(net);
    return net;
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("network document: ") + e.what());
  } catch (const DimensionError& e) {
    throw SchemaError(std::string("network document: ") + e.what());
  }
}

inline void save_network(const AuxNetwork& net, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write '" + path + "'");
  out << network_to_json(net).dump(1) << '\n';
}

inline AuxNetwork load_network(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open model file '" + path + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError("'" + path + "': " + e.what());
  }
  return network_from_json(j);
}

}  // namespace auxnas
