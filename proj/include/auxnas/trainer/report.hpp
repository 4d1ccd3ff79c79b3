#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "auxnas/autodiff/param_store.hpp"
#include "auxnas/util/format.hpp"

namespace auxnas {

struct AlphaStats {
  std::size_t count = 0;
  double min = 0.0, max = 0.0, mean = 0.0, median = 0.0;
};

inline AlphaStats alpha_stats(std::vector<double> v) {
  AlphaStats s;
  s.count = v.size();
  if (v.empty()) return s;
  std::sort(v.begin(), v.end());
  s.min = v.front();
  s.max = v.back();
  double sum = 0.0;
  for (double x : v) sum += x;
  s.mean = sum / static_cast<double>(v.size());
  const std::size_t h = v.size() / 2;
  s.median = v.size() % 2 ? v[h] : 0.5 * (v[h - 1] + v[h]);
  return s;
}

inline AlphaStats alpha_stats(const ParamStore& store, ParamGroup g) {
  std::vector<double> v;
  for (const auto& name : store.names_in(g)) v.push_back(store.value(name).item());
  return alpha_stats(std::move(v));
}

/// One training step. For alternating search the losses are those of the
/// weight step; R is lambda * sum|alpha_P| after the step.
struct StepRecord {
  std::size_t step = 0;
  std::size_t epoch = 0;
  double loss_p = 0.0;
  double loss_a = 0.0;
  double reg = 0.0;
  double lambda = 0.0;
  double alpha_p_max = 0.0;
  double alpha_p_mean = 0.0;
  double alpha_a_mean = 0.0;
  std::uint64_t op_count = 0;
  double wall_ms = 0.0;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double loss_p = 0.0;  // mean over the epoch's steps
  double loss_a = 0.0;
  double val_loss_p = 0.0;
  AlphaStats alpha_p;
  AlphaStats alpha_a;
};

struct TrainReport {
  std::string method;
  std::vector<StepRecord> steps;
  std::vector<EpochRecord> epochs;
  std::map<std::string, double> alpha_snapshot;  // final architecture weights by name
  double final_lambda = 0.0;
  std::uint64_t final_param_hash = 0;

  double final_reg() const { return steps.empty() ? 0.0 : steps.back().reg; }

  AlphaStats final_stats(ParamGroup g) const {
    const std::string prefix = g == ParamGroup::alpha_p ? "alpha_p/" : "alpha_a/";
    std::vector<double> v;
    for (const auto& [name, value] : alpha_snapshot)
      if (name.rfind(prefix, 0) == 0) v.push_back(value);
    return alpha_stats(std::move(v));
  }
};

inline constexpr const char* kStepCsvHeader =
    "step,L_P,L_A,R,lambda,alphaP_max,alphaP_mean,alphaA_mean,batch_op_count,batch_wall_ms";

inline void write_steps_csv(const TrainReport& r, std::ostream& out) {
  out << kStepCsvHeader << '\n';
  for (const auto& s : r.steps) {
    out << s.step << ',' << format_double(s.loss_p) << ',' << format_double(s.loss_a) << ','
        << format_double(s.reg) << ',' << format_double(s.lambda) << ',' << format_double(s.alpha_p_max) << ','
        << format_double(s.alpha_p_mean) << ',' << format_double(s.alpha_a_mean) << ',' << s.op_count << ','
        << format_double(s.wall_ms) << '\n';
  }
}

inline nlohmann::json to_json(const AlphaStats& s) {
  return {{"count", s.count}, {"min", s.min}, {"max", s.max}, {"mean", s.mean}, {"median", s.median}};
}

inline nlohmann::json to_json(const TrainReport& r) {
  nlohmann::json j;
  j["format"] = "auxnas.report/1";
  j["method"] = r.method;
  j["steps"] = r.steps.size();
  j["final_lambda"] = r.final_lambda;
  j["final_R"] = r.final_reg();
  j["final_param_hash"] = r.final_param_hash;
  j["alpha_p"] = to_json(r.final_stats(ParamGroup::alpha_p));
  j["alpha_a"] = to_json(r.final_stats(ParamGroup::alpha_a));
  j["alpha_snapshot"] = r.alpha_snapshot;
  j["epochs"] = nlohmann::json::array();
  for (const auto& e : r.epochs) {
    j["epochs"].push_back({{"epoch", e.epoch},
                           {"L_P", e.loss_p},
                           {"L_A", e.loss_a},
                           {"val_L_P", e.val_loss_p},
                           {"alpha_p", to_json(e.alpha_p)},
                           {"alpha_a", to_json(e.alpha_a)}});
  }
  return j;
}

}  // namespace auxnas
