#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "auxnas/evalbench/metrics.hpp"
#include "auxnas/evalbench/protocol.hpp"
#include "auxnas/evalbench/scaling.hpp"
#include "auxnas/evalbench/stats.hpp"

using namespace auxnas;

namespace {

TaskDef regression(double noise = 0.1) { return {"", {HeadKind::regression, 1, LossKind::mse}, noise, 0.0}; }

Protocol small_protocol(std::vector<Method> methods, std::vector<std::uint64_t> seeds) {
  Protocol p;
  p.methods = std::move(methods);
  p.seeds = std::move(seeds);
  p.synthetic = SyntheticSource{6, 0.9, {regression(), regression()}, 200};
  p.arch.n_layers = 2;
  p.arch.width = 6;
  p.train.epochs = 2;
  p.train.batch_size = 16;
  return p;
}

// Student t density integrated with composite Simpson between 0 and x,
// offset by the half mass below 0.
double t_cdf_oracle(double x, double nu) {
  auto pdf = [nu](double t) {
    return std::tgamma((nu + 1) / 2) / (std::sqrt(nu * M_PI) * std::tgamma(nu / 2)) *
           std::pow(1 + t * t / nu, -(nu + 1) / 2);
  };
  const int n = 20000;
  const double h = x / n;
  double s = pdf(0) + pdf(x);
  for (int i = 1; i < n; ++i) s += pdf(i * h) * (i % 2 ? 4 : 2);
  return 0.5 + s * h / 3;
}

}  // namespace

TEST(Metrics, PerfectPredictions) {
  Tensor logits = Tensor::matrix({{3, 1, 0}, {0, 2, 1}, {0, 0, 5}});
  std::vector<int> labels{0, 1, 2};
  EXPECT_EQ(accuracy(logits, labels), 1.0);
  Tensor y = Tensor::matrix({{1.5}, {-2}});
  EXPECT_EQ(mse(y, y), 0.0);
  auto m = metrics(logits, Tensor::matrix({{0}, {1}, {2}}), {HeadKind::classification, 3, LossKind::cross_entropy});
  EXPECT_EQ(m.at("accuracy"), 1.0);
}

TEST(Metrics, RmseIsRootOfMse) {
  Tensor p = Tensor::matrix({{1, 2}, {3, 4}}), t = Tensor::matrix({{0, 2.5}, {3.25, 1}});
  auto m = metrics(p, t, {HeadKind::regression, 2, LossKind::mse});
  EXPECT_EQ(m.at("rmse"), std::sqrt(m.at("mse")));
  EXPECT_EQ(rmse(p, t), std::sqrt(mse(p, t)));
  EXPECT_DOUBLE_EQ(m.at("mse"), (1 + 0.25 + 0.0625 + 9) / 4);
}

TEST(Metrics, RandomLogitsHitChance) {
  const std::size_t n = 20000, C = 4;
  Rng rng(3);
  std::normal_distribution<double> d;
  std::uniform_int_distribution<int> cls(0, C - 1);
  Tensor logits({n, C});
  for (double& v : logits.data()) v = d(rng);
  std::vector<int> labels(n);
  for (auto& l : labels) l = cls(rng);
  const double p = 1.0 / C, sigma = std::sqrt(p * (1 - p) / n);
  EXPECT_NEAR(accuracy(logits, labels), p, 3 * sigma);
}

TEST(Metrics, Errors) {
  Dataset d = generate(make_family(3, 0.5, {regression()}, 1), 40, 2);
  std::fill(d.split.begin(), d.split.end(), Split::train);
  ArchConfig arch;
  arch.n_layers = 1;
  arch.width = 3;
  EXPECT_THROW(evaluate(inference_network(build_for(Method::single, arch, d, 1)), d, Split::test), ContractViolation);
  EXPECT_THROW(mse(Tensor::matrix({{1}}), Tensor::matrix({{1, 2}})), DimensionError);
  EXPECT_THROW(accuracy(Tensor::matrix({{1, 2}}), std::vector<int>{0, 1}), DimensionError);
}

TEST(PairedTest, MatchesIntegratedDensity) {
  std::vector<double> a{1.0, 2.5, 2.0, 3.0, 1.2, 0.7}, b{1.4, 2.6, 2.9, 3.1, 1.1, 1.5};
  auto r = paired_t_test(a, b);
  double mean = 0;
  std::vector<double> d;
  for (std::size_t i = 0; i < a.size(); ++i) d.push_back(a[i] - b[i]);
  for (double x : d) mean += x / d.size();
  double ss = 0;
  for (double x : d) ss += (x - mean) * (x - mean);
  const double t = mean / std::sqrt(ss / (d.size() - 1) / d.size());
  EXPECT_NEAR(r.t, t, 1e-12);
  EXPECT_NEAR(r.p, t_cdf_oracle(t, d.size() - 1.0), 1e-8);
  EXPECT_LT(r.p, 0.1);
  EXPECT_GT(paired_t_test(b, a).p, 0.9);
}

TEST(PairedTest, DegenerateInputs) {
  EXPECT_EQ(paired_t_test({1, 2}, {1, 2}).p, 0.5);
  EXPECT_EQ(paired_t_test({0, 1}, {1, 2}).p, 0.0);
  EXPECT_THROW(paired_t_test({1}, {2}), ContractViolation);
  EXPECT_THROW(paired_t_test({1, 2}, {2}), ContractViolation);
}

TEST(Evaluate, FullSearchNetworkFailsThePurityGuard) {
  Dataset d = generate(make_family(6, 0.9, {regression(), regression()}, 1), 120, 2);
  ArchConfig arch;
  arch.n_layers = 2;
  arch.width = 5;
  AuxNetwork net = build_for(Method::aux_nas, arch, d, 3);
  try {
    evaluate(net, d, Split::test);
    FAIL();
  } catch (const InvariantViolation& e) {
    EXPECT_EQ(e.name(), "evaluation_purity");
  }
  hard_zero_alpha_p(net);
  const Evaluation pruned = evaluate(inference_network(net), d, Split::test);
  Tape tape;
  const auto rows = d.indices(Split::test);
  Var full = forward(net, tape, gather(d, rows).x, NormMode::eval).primary;
  EXPECT_EQ(pruned.metrics.at("mse"), mse(full.value(), gather_rows(d.tasks[0].labels, rows)));
}

TEST(Evaluate, AuxHeadWithoutAuxiliariesIsSingle) {
  Dataset d = generate(make_family(6, 0.9, {regression(), regression()}, 4), 200, 5);
  ArchConfig arch;
  arch.n_layers = 2;
  arch.width = 6;
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.batch_size = 16;
  RunResult single = run_method(Method::single, arch, cfg, d, 6);
  arch.aux_tasks = 0;
  AuxNetwork head = aux_head_baseline(arch, d, cfg, 6);
  EXPECT_EQ(head.aux_count(), 0u);
  ASSERT_TRUE(single.ok);
  EXPECT_EQ(evaluate(inference_network(head), d, Split::test).metrics, single.metrics);
}

TEST(Evaluate, InferenceCostIgnoresAuxiliaries) {
  Dataset d = generate(make_family(6, 0.9, {regression(), regression(), regression()}, 7), 120, 8);
  ArchConfig arch;
  arch.n_layers = 3;
  arch.width = 5;
  TrainConfig cfg;
  cfg.epochs = 1;
  cfg.batch_size = 8;
  std::set<std::uint64_t> ops;
  for (std::size_t k : {1, 2}) {
    arch.aux_tasks = k;
    for (auto m : {Method::aux_g_layer, Method::aux_nas}) ops.insert(run_method(m, arch, cfg, d, 1).inference_ops);
  }
  EXPECT_EQ(ops.size(), 1u);
}

TEST(Protocol, TableIsPairedAndAggregatesRecompute) {
  Protocol p = small_protocol({Method::single, Method::aux_g_layer, Method::aux_nas}, {1, 2, 3});
  p.jobs = 2;
  ResultTable t = run_protocol(p);
  ASSERT_EQ(t.runs.size(), 9u);
  EXPECT_TRUE(t.paired_fair());
  EXPECT_EQ(t.failures(), 0u);
  for (auto m : p.methods) {
    const auto v = t.values(m, "mse");
    ASSERT_EQ(v.size(), 3u);
    double mean = (v[0] + v[1] + v[2]) / 3;
    double sd = std::sqrt(((v[0] - mean) * (v[0] - mean) + (v[1] - mean) * (v[1] - mean) +
                           (v[2] - mean) * (v[2] - mean)) / 2);
    EXPECT_NEAR(t.aggregate(m, "mse").mean, mean, 1e-12);
    EXPECT_NEAR(t.aggregate(m, "mse").std, sd, 1e-12);
  }
  const auto diff = t.paired_differences(Method::aux_nas, Method::single, "mse");
  ASSERT_EQ(diff.size(), 3u);
  EXPECT_EQ(diff[0], t.values(Method::aux_nas, "mse")[0] - t.values(Method::single, "mse")[0]);
}

TEST(Protocol, ParallelAndSerialAgree) {
  Protocol p = small_protocol({Method::single, Method::aux_nas}, {4, 5});
  p.jobs = 1;
  ResultTable a = run_protocol(p);
  p.jobs = 4;
  ResultTable b = run_protocol(p);
  std::ostringstream sa, sb;
  write_csv(a, sa);
  write_csv(b, sb);
  EXPECT_EQ(sa.str(), sb.str());
}

TEST(Protocol, DivergedMethodIsMarkedFailed) {
  Protocol p = small_protocol({Method::single, Method::aux_g_layer}, {1, 2});
  TrainConfig bad = p.train;
  bad.optim.lr_w = 1e12;
  p.overrides[Method::aux_g_layer] = bad;
  ResultTable t = run_protocol(p);
  EXPECT_EQ(t.failures(), 2u);
  EXPECT_EQ(t.values(Method::single, "mse").size(), 2u);
  std::ostringstream csv;
  write_csv(t, csv);
  EXPECT_NE(csv.str().find("aux_g_layer,1,failed"), std::string::npos);
  auto j = to_json(t);
  EXPECT_EQ(j["runs"][2]["status"], "failed");
  EXPECT_TRUE(j["runs"][2].contains("error"));
}

TEST(Protocol, Validation) {
  Protocol p = small_protocol({}, {1});
  EXPECT_THROW(run_protocol(p), ConfigError);
  p = small_protocol({Method::single}, {1});
  p.csv = CsvSource{};
  EXPECT_THROW(run_protocol(p), ConfigError);
  EXPECT_THROW(method_from_string("aux_x"), ConfigError);
  p = small_protocol({Method::aux_nas}, {1});
  p.arch.aux_tasks = 3;
  EXPECT_THROW(run_protocol(p), ConfigError);
}

TEST(Ablation, MonotoneSeedCount) {
  ResultTable t;
  auto add = [&](Method m, std::uint64_t seed, double v) {
    RunResult r;
    r.method = m;
    r.seed = seed;
    r.ok = true;
    r.metrics["mse"] = v;
    t.runs.push_back(r);
  };
  add(Method::aux_g_layer, 1, 3.0);
  add(Method::aux_nas_no_features, 1, 2.0);
  add(Method::aux_nas, 1, 2.0);
  add(Method::aux_g_layer, 2, 1.0);
  add(Method::aux_nas_no_features, 2, 2.0);
  add(Method::aux_nas, 2, 0.5);
  EXPECT_EQ(monotone_seeds(t, "mse", true), 1u);
  EXPECT_EQ(monotone_seeds(t, "mse", false), 0u);
}

TEST(Gnuplot, OneLinePerEpoch) {
  TrainReport r;
  r.method = "aux_nas";
  r.epochs.resize(3);
  for (std::size_t i = 0; i < 3; ++i) r.epochs[i].epoch = i;
  std::ostringstream out;
  write_gnuplot(r, out);
  const std::string s = out.str();
  EXPECT_EQ(std::count(s.begin(), s.end(), '\n'), 5);
  EXPECT_EQ(s.rfind("2 0 0 0 0 0 0\n"), s.size() - 14);
}

TEST(Scaling, FitRecoversExactCoefficients) {
  std::vector<double> x1{2, 3, 4, 7}, x2{1, 5, 2, 3}, y;
  for (std::size_t i = 0; i < x1.size(); ++i) y.push_back(1.5 * x1[i] + 0.25 * x2[i]);
  auto f = fit_cost(x1, x2, y);
  EXPECT_NEAR(f.a, 1.5, 1e-12);
  EXPECT_NEAR(f.b, 0.25, 1e-12);
  EXPECT_NEAR(f.r2, 1.0, 1e-12);
}

TEST(Scaling, CostGrowsLinearlyInK) {
  ArchConfig arch;
  auto s = scaling_study({1, 2, 3}, arch);
  ASSERT_EQ(s.points.size(), 3u);
  EXPECT_GE(s.op_ratio(2, 1), 1.4);
  EXPECT_LE(s.op_ratio(2, 1), 2.1);
  EXPECT_GT(s.fit.r2, 0.95);
  EXPECT_EQ(s.at(1).pruned_inference_ops, s.at(2).pruned_inference_ops);
  EXPECT_EQ(s.at(1).pruned_inference_ops, s.at(3).pruned_inference_ops);
  EXPECT_LT(s.at(1).alpha_count, s.at(3).alpha_count);
  EXPECT_THROW(scaling_study({0}, arch), ConfigError);
}
