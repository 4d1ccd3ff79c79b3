#include <gtest/gtest.h>

#include <cmath>
#include <memory>
#include <sstream>

#include "auxnas/taskgen/family.hpp"
#include "auxnas/trainer/train.hpp"
#include "support.hpp"

using namespace auxnas;
using namespace auxnas::testing;

namespace {

Dataset small_data(double rho, std::uint64_t seed, std::size_t n = 240, std::size_t input_dim = 5,
                   double noise = 0.1, std::size_t tasks = 3) {
  TaskDef t{"", {HeadKind::regression, 1, LossKind::mse}, noise, 0.0};
  return generate(make_family(input_dim, rho, std::vector<TaskDef>(tasks, t), seed), n, seed + 1);
}

TrainConfig small_config(std::size_t epochs = 2, std::size_t batch = 16) {
  TrainConfig c;
  c.epochs = epochs;
  c.batch_size = batch;
  return c;
}

std::uint64_t group_hash(const AuxNetwork& net, bool arch) {
  return net.params.hash_group([arch](const ParamEntry& e) { return is_arch_group(e.group) == arch; });
}

std::uint64_t stats_hash(const AuxNetwork& net) {
  std::uint64_t h = 0;
  for (const auto& [k, s] : net.norm_stats) h = hash_tensor(s.var, hash_tensor(s.mean, h));
  return h;
}

Batch rows_of(const Dataset& d, std::size_t begin, std::size_t n) {
  std::vector<std::size_t> rows(n);
  for (std::size_t i = 0; i < n; ++i) rows[i] = begin + i;
  return gather(d, rows);
}

// Zeroes every weight of auxiliary branch layers so their features are
// exactly zero in any normalization mode.
void silence_aux_features(AuxNetwork& net) {
  for (auto& [name, e] : net.params) {
    if (e.owner == Owner::primary) continue;
    if (e.group == ParamGroup::aux_weights || e.group == ParamGroup::norm_affine ||
        e.group == ParamGroup::fusion_projection) {
      e.value.fill(0.0);
    }
  }
}

std::string steps_csv(const TrainReport& r) {
  std::ostringstream s;
  write_steps_csv(r, s);
  return s.str();
}

}  // namespace

TEST(Schedule, LinearRampEndpointsAndMonotone) {
  LambdaSchedule s;
  s.total_steps = 11;
  EXPECT_EQ(s.at(0), 0.0);
  EXPECT_EQ(s.at(10), 100.0);
  EXPECT_EQ(s.at(5), 50.0);
  EXPECT_EQ(s.at(99), 100.0);
  for (std::size_t i = 1; i < 11; ++i) EXPECT_GE(s.at(i), s.at(i - 1));
  LambdaSchedule q{RampShape::quadratic, 0, 100, 3};
  EXPECT_EQ(q.at(1), 25.0);
  LambdaSchedule one{RampShape::linear, 0, 100, 1};
  EXPECT_EQ(one.at(0), 0.0);
  EXPECT_EQ(one.at(1), 100.0);
  EXPECT_THROW((LambdaSchedule{RampShape::linear, 5, 1, 3}.validate()), ConfigError);
}

TEST(NasObjective, Examples) {
  Tape tape;
  Var lp = tape.constant(Tensor::scalar(1.25)), la = tape.constant(Tensor::scalar(0.5));
  std::vector<Var> half, zero;
  for (int i = 0; i < 6; ++i) {
    half.push_back(tape.variable(Tensor::scalar(0.5)));
    zero.push_back(tape.variable(Tensor::scalar(0.0)));
  }
  EXPECT_EQ(nas_objective(lp, la, half, 0.0).value().item(), 1.75);
  EXPECT_EQ(nas_objective(lp, la, zero, 100.0).value().item(), 1.75);
  EXPECT_EQ(nas_objective(lp, la, half, 100.0).value().item(), 301.75);
  EXPECT_EQ(nas_objective(lp, la, {}, 100.0).value().item(), 1.75);
  EXPECT_THROW(nas_objective(lp, la, half, -1.0), ContractViolation);
}

TEST(NasObjective, RegularizerIsLinearInLambda) {
  auto net = make_net(Mode::aux_nas, 2, 4, 6, 3);
  Rng rng(4);
  randomize_alphas(net, rng);
  for (double lambda : {0.3, 1.0, 7.7, 100.0}) {
    EXPECT_EQ(regularizer(net.params, 2 * lambda), 2 * regularizer(net.params, lambda));
  }
}

TEST(Optim, AccumulatorsMatchAndGroupsAreSeparate) {
  auto net = make_net(Mode::aux_nas, 1, 2, 4, 1);
  Dataset d = small_data(0.5, 2, 60);
  Batch b = rows_of(d, 0, 8);
  for (auto kind : {OptimKind::sgd_momentum, OptimKind::adam}) {
    OptimConfig cfg;
    cfg.kind = kind;
    OptimState opt(cfg);
    auto copy = net;
    weight_step(copy, b, opt);
    weight_step(copy, b, opt);
    EXPECT_TRUE(opt.consistent_with(copy.params));
    EXPECT_GT(opt.accumulator_count(), 0u);
    const auto before = opt.accumulator_count();
    alpha_step(copy, b, opt, 1.0);
    EXPECT_EQ(opt.accumulator_count(), before);
  }
  OptimState opt;
  GradMap g;
  const auto alphas = net.params.names_in(ParamGroup::alpha_p);
  for (const auto& n : alphas) g[n] = Tensor::scalar(0.0);
  EXPECT_THROW(opt.step_weights(net.params, g, alphas), ContractViolation);
  const auto ws = net.params.names_in(ParamGroup::primary_weights);
  EXPECT_THROW(opt.step_alphas(net.params, g, ws), ContractViolation);
  EXPECT_THROW(optim_kind_from_string("rmsprop"), ConfigError);
}

TEST(Optim, ProximalShrinkSnapsSmallValuesToZero) {
  ParamStore s;
  s.add("alpha_p/a", ParamGroup::alpha_p, Owner::primary, Tensor::scalar(0.03));
  s.add("alpha_p/b", ParamGroup::alpha_p, Owner::primary, Tensor::scalar(0.5));
  GradMap g{{"alpha_p/a", Tensor::scalar(0.0)}, {"alpha_p/b", Tensor::scalar(0.0)}};
  OptimConfig cfg;
  cfg.lr_alpha = 0.125;
  OptimState opt(cfg);
  opt.step_alphas(s, g, {"alpha_p/a", "alpha_p/b"}, {"alpha_p/a", "alpha_p/b"}, 0.5);
  EXPECT_EQ(s.value("alpha_p/a").item(), 0.0);
  EXPECT_EQ(s.value("alpha_p/b").item(), 0.4375);
}

TEST(AlternateStep, WeightStepLeavesAlphaBits) {
  auto net = make_net(Mode::aux_nas, 2, 3, 6, 5);
  Rng rng(6);
  randomize_projections(net, rng);
  randomize_alphas(net, rng);
  Dataset d = small_data(0.7, 7, 80);
  OptimState opt;
  const auto a0 = group_hash(net, true), w0 = group_hash(net, false);
  weight_step(net, rows_of(d, 0, 16), opt);
  EXPECT_EQ(group_hash(net, true), a0);
  EXPECT_NE(group_hash(net, false), w0);
}

TEST(AlternateStep, AlphaStepLeavesWeightBitsAndBuffers) {
  auto net = make_net(Mode::aux_nas, 2, 3, 6, 5);
  Rng rng(6);
  randomize_projections(net, rng);
  randomize_norms(net, rng);
  Dataset d = small_data(0.7, 7, 80);
  OptimState opt;
  const auto a0 = group_hash(net, true), w0 = group_hash(net, false), s0 = stats_hash(net);
  alpha_step(net, rows_of(d, 0, 16), opt, 3.0);
  EXPECT_EQ(group_hash(net, false), w0);
  EXPECT_EQ(stats_hash(net), s0);
  EXPECT_NE(group_hash(net, true), a0);
}

TEST(AlternateStep, ClampKeepsAlphasInUnitInterval) {
  auto net = make_net(Mode::aux_nas, 2, 3, 6, 8);
  Rng rng(9);
  randomize_projections(net, rng, 2.0);
  Dataset d = small_data(0.7, 10, 80);
  OptimConfig cfg;
  cfg.lr_alpha = 50.0;
  OptimState opt(cfg);
  for (int i = 0; i < 5; ++i) {
    alternate_step(net, rows_of(d, 0, 16), rows_of(d, 16, 16), opt, 0.0);
    for (const auto& [name, e] : net.params) {
      if (!is_arch_group(e.group)) continue;
      EXPECT_GE(e.value.item(), 0.0) << name;
      EXPECT_LE(e.value.item(), 1.0) << name;
    }
  }
}

TEST(AlternateStep, RejectsOverlapAndOtherModes) {
  auto net = make_net(Mode::aux_nas, 1, 2, 4, 1);
  Dataset d = small_data(0.5, 2, 60);
  OptimState opt;
  EXPECT_THROW(alternate_step(net, rows_of(d, 0, 8), rows_of(d, 7, 8), opt, 1.0), ContractViolation);
  auto g = make_net(Mode::aux_g, 1, 2, 4, 1);
  EXPECT_THROW(alternate_step(g, rows_of(d, 0, 8), rows_of(d, 8, 8), opt, 1.0), ContractViolation);
}

TEST(AlternateStep, SilentSourceIsPrunedWithinBound) {
  auto net = make_net(Mode::aux_nas, 2, 4, 6, 11);
  Rng rng(12);
  randomize_projections(net, rng);
  silence_aux_features(net);
  Dataset d = small_data(0.9, 13, 80);
  OptimConfig cfg;
  cfg.lr_alpha = 0.0625;
  OptimState opt(cfg);
  const double lambda = 2.0;
  const auto bound = static_cast<int>(std::ceil(0.5 / (cfg.lr_alpha * lambda)));
  Batch b = rows_of(d, 0, 16);
  for (int step = 0; step < bound; ++step) alpha_step(net, b, opt, lambda);
  EXPECT_EQ(max_alpha_p(net), 0.0);
  for (int step = 0; step < 3; ++step) alpha_step(net, b, opt, lambda);
  EXPECT_EQ(max_alpha_p(net), 0.0);
}

TEST(AlternateStep, ZeroAlphaWithoutDataGradientStaysZero) {
  auto net = make_net(Mode::aux_nas, 1, 3, 5, 14);
  silence_aux_features(net);
  hard_zero_alpha_p(net);
  Dataset d = small_data(0.9, 15, 60);
  OptimState opt;
  for (int step = 0; step < 4; ++step) alpha_step(net, rows_of(d, 0, 16), opt, 50.0);
  EXPECT_EQ(max_alpha_p(net), 0.0);
}

TEST(TrainAuxG, ZeroLearningRateIsAFixedPoint) {
  auto net = make_net(Mode::aux_g, 1, 2, 6, 16);
  Dataset d = small_data(0.8, 17, 100);
  TrainConfig cfg = small_config(3, 70);
  cfg.optim.lr_w = 0.0;
  const auto w0 = group_hash(net, false);
  TrainReport r = train_aux_g(net, d, cfg);
  EXPECT_EQ(group_hash(net, false), w0);
  ASSERT_EQ(r.epochs.size(), 3u);
  for (const auto& e : r.epochs) EXPECT_NEAR(e.loss_p, r.epochs[0].loss_p, 1e-12);
  EXPECT_EQ(r.final_reg(), 0.0);
  EXPECT_EQ(r.final_stats(ParamGroup::alpha_p).count, 0u);
}

TEST(TrainAuxG, WrongModeOrData) {
  auto nas = make_net(Mode::aux_nas, 1, 2, 4, 1);
  Dataset d = small_data(0.5, 2, 60);
  EXPECT_THROW(train_aux_g(nas, d, small_config()), ContractViolation);
  auto g = make_net(Mode::aux_g, 3, 2, 4, 1);
  EXPECT_THROW(weight_step(g, rows_of(d, 0, 8), *std::make_unique<OptimState>()), ConfigError);
  EXPECT_THROW(train_aux_g(g, d, small_config()), ConfigError);
  auto wide = make_net(Mode::aux_g, 1, 2, 4, 1, 7);
  EXPECT_THROW(train_aux_g(wide, d, small_config()), ConfigError);
  TrainConfig bad = small_config();
  bad.batch_size = 1;
  EXPECT_THROW(train(g, d, bad), ConfigError);
}

TEST(TrainAuxG, IdenticalAuxiliaryTaskDoesNotHurt) {
  std::vector<double> single, aux_g;
  TaskDef t{"", {HeadKind::regression, 1, LossKind::mse}, 0.3, 0.0};
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Dataset d = generate(make_family(6, 1.0, {t, t}, 100 + seed), 600, 200 + seed);
    TrainConfig cfg = small_config(15, 32);
    cfg.batching_seed = seed;
    auto s = make_net(Mode::single, 0, 3, 12, 300 + seed, 6);
    auto g = make_net(Mode::aux_g, 1, 3, 12, 300 + seed, 6);
    train_joint(s, d, cfg);
    train_aux_g(g, d, cfg);
    single.push_back(evaluate_primary_loss(s, d, Split::test));
    aux_g.push_back(evaluate_primary_loss(g, d, Split::test));
  }
  EXPECT_LE(mean_std(aux_g).mean, mean_std(single).mean);
}

TEST(TrainAuxNas, ReportIsConsistent) {
  auto net = make_net(Mode::aux_nas, 2, 3, 6, 20);
  Dataset d = small_data(0.9, 21, 240, 5);
  TrainConfig cfg = small_config(2, 16);
  TrainReport r = train_aux_nas(net, d, cfg);
  const std::size_t per_epoch = 168 / 32;
  ASSERT_EQ(r.steps.size(), 2 * per_epoch);
  EXPECT_EQ(r.steps.front().lambda, 0.0);
  EXPECT_EQ(r.final_lambda, 100.0);
  double sum = 0.0;
  for (const auto& [name, v] : r.alpha_snapshot)
    if (name.rfind("alpha_p/", 0) == 0) sum += std::abs(v);
  EXPECT_NEAR(r.final_reg(), r.final_lambda * sum, 1e-12);
  EXPECT_EQ(r.final_stats(ParamGroup::alpha_p).count, net.params.names_in(ParamGroup::alpha_p).size());
  for (const auto& s : r.steps) {
    EXPECT_GT(s.op_count, 0u);
    EXPECT_EQ(s.wall_ms, 0.0);
  }
  const std::string csv = steps_csv(r);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), kStepCsvHeader);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), static_cast<long>(r.steps.size() + 1));
  auto j = to_json(r);
  EXPECT_EQ(j["format"], "auxnas.report/1");
  EXPECT_EQ(j["epochs"].size(), 2u);
}

TEST(TrainAuxNas, SameSeedsSameBits) {
  Dataset d = small_data(0.9, 22, 200);
  TrainConfig cfg = small_config(2, 16);
  cfg.batching_seed = 5;
  auto a = make_net(Mode::aux_nas, 1, 3, 6, 23), b = make_net(Mode::aux_nas, 1, 3, 6, 23);
  TrainReport ra = train_aux_nas(a, d, cfg), rb = train_aux_nas(b, d, cfg);
  EXPECT_EQ(steps_csv(ra), steps_csv(rb));
  EXPECT_EQ(ra.final_param_hash, rb.final_param_hash);
  EXPECT_EQ(to_json(ra).dump(), to_json(rb).dump());
  cfg.batching_seed = 6;
  auto c = make_net(Mode::aux_nas, 1, 3, 6, 23);
  EXPECT_NE(train_aux_nas(c, d, cfg).final_param_hash, ra.final_param_hash);
}

TEST(TrainAuxNas, AuxiliaryWeightsStayInterior) {
  auto net = make_net(Mode::aux_nas, 1, 4, 8, 24);
  Dataset d = small_data(0.9, 25, 400, 5);
  TrainReport r = train_aux_nas(net, d, small_config(6, 16));
  const auto a = r.final_stats(ParamGroup::alpha_a);
  EXPECT_GT(a.mean, 0.0);
  EXPECT_LT(a.mean, 1.0);
}

TEST(TrainAuxNas, ZeroLambdaDoesNotDecay) {
  auto net = make_net(Mode::aux_nas, 1, 4, 8, 26);
  Dataset d = small_data(0.9, 27, 400, 5);
  TrainConfig cfg = small_config(6, 16);
  cfg.schedule = constant_lambda(0.0, 1);
  TrainReport r = train_aux_nas(net, d, cfg);
  EXPECT_GT(r.final_stats(ParamGroup::alpha_p).mean, 0.1);
  EXPECT_EQ(r.final_reg(), 0.0);
}

TEST(TrainAuxNas, FrozenAlphaPStaysZero) {
  auto net = make_net(Mode::aux_nas, 1, 3, 6, 28);
  Dataset d = small_data(0.9, 29, 200, 5);
  TrainConfig cfg = small_config(2, 16);
  cfg.freeze_alpha_p = true;
  TrainReport r = train_aux_nas(net, d, cfg);
  EXPECT_EQ(r.method, "aux_nas_no_features");
  EXPECT_EQ(max_alpha_p(net), 0.0);
  EXPECT_GT(r.final_stats(ParamGroup::alpha_a).max, 0.0);
}

TEST(TrainAuxNas, DivergenceRestoresLastGoodState) {
  auto net = make_net(Mode::aux_nas, 1, 2, 6, 30);
  Dataset d = small_data(0.9, 31, 200, 5, 0.0);
  TrainConfig cfg = small_config(5, 16);
  cfg.optim.lr_w = 1e12;
  try {
    train_aux_nas(net, d, cfg);
    FAIL() << "expected divergence";
  } catch (const DivergenceError& e) {
    EXPECT_NE(std::string(e.what()).find("diverged at step"), std::string::npos);
  }
  for (const auto& [name, e] : net.params)
    for (double v : e.value.data()) EXPECT_TRUE(std::isfinite(v)) << name;
  for (const auto& [key, st] : net.norm_stats)
    for (double v : st.var.data()) EXPECT_TRUE(std::isfinite(v)) << key;
}

TEST(Monitor, ThresholdExamples) {
  TrainReport zero;
  zero.alpha_snapshot = {{"alpha_p/a", 0.0}, {"alpha_p/b", 0.0}, {"alpha_a/a", 0.4}};
  EXPECT_TRUE(monitor_convergence(zero, 1e-300).pass);
  TrainReport one = zero;
  one.alpha_snapshot["alpha_p/b"] = 0.5;
  EXPECT_FALSE(monitor_convergence(one).pass);
  EXPECT_EQ(monitor_convergence(one).alpha_p.max, 0.5);
}

TEST(Monitor, ReplicateSummary) {
  std::vector<TrainReport> runs(3);
  const double ap[] = {0.0, 0.01, 0.5}, aa[] = {0.2, 0.3, 0.4};
  for (int i = 0; i < 3; ++i) runs[i].alpha_snapshot = {{"alpha_p/x", ap[i]}, {"alpha_a/x", aa[i]}};
  auto s = monitor_convergence(runs);
  EXPECT_EQ(s.runs, 3u);
  EXPECT_EQ(s.passed, 2u);
  EXPECT_NEAR(s.stats.at("alpha_a.mean").mean, 0.3, 1e-15);
  EXPECT_NEAR(s.stats.at("alpha_a.mean").std, 0.1, 1e-15);
  EXPECT_EQ(mean_std({4.0}).std, 0.0);
}

TEST(TrainJoint, AuxHeadSharesTheTrunk) {
  BuildOptions opt;
  opt.mode = Mode::aux_head;
  Rng rng(32);
  auto net = build(5, regression_branch(2, 6), {regression_branch(2, 6)}, opt, rng);
  Dataset d = small_data(0.5, 33, 80);
  Tape tape;
  auto L = compute_losses(net, tape, rows_of(d, 0, 16), NormMode::train);
  GradMap g = tape.backward(L.aux, net.params);
  double trunk = 0.0;
  for (const auto& [name, t] : g)
    if (name.rfind("pri/layer", 0) == 0)
      for (double v : t.data()) trunk += std::abs(v);
  EXPECT_GT(trunk, 0.0);
  TrainReport r = train(net, d, small_config(2, 16));
  EXPECT_EQ(r.method, "aux_head");
  EXPECT_GT(r.epochs.back().loss_a, 0.0);
}

TEST(TrainJoint, TimingFillsWallTime) {
  auto net = make_net(Mode::single, 0, 2, 4, 34);
  Dataset d = small_data(0.5, 35, 80);
  TrainConfig cfg = small_config(1, 16);
  cfg.timing = true;
  TrainReport r = train(net, d, cfg);
  double total = 0;
  for (const auto& s : r.steps) total += s.wall_ms;
  EXPECT_GT(total, 0.0);
}
