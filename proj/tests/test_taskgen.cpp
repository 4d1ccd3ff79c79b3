#include <gtest/gtest.h>

#include <cmath>
#include <set>
#include <sstream>

#include "auxnas/taskgen/csv.hpp"
#include "auxnas/taskgen/iterate.hpp"

using namespace auxnas;

namespace {

TaskDef regression_task(double noise, std::size_t dim = 1) {
  return {"", {HeadKind::regression, dim, LossKind::mse}, noise, 0.0};
}

TaskDef classification_task(std::size_t classes, double flip = 0.0) {
  return {"", {HeadKind::classification, classes, LossKind::cross_entropy}, 0.0, flip};
}

// Sample Pearson correlation, computed in two passes.
double correlation(const Tensor& a, const Tensor& b) {
  const std::size_t n = a.rows();
  double ma = 0, mb = 0;
  for (std::size_t i = 0; i < n; ++i) {
    ma += a(i, 0);
    mb += b(i, 0);
  }
  ma /= n;
  mb /= n;
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < n; ++i) {
    sab += (a(i, 0) - ma) * (b(i, 0) - mb);
    saa += (a(i, 0) - ma) * (a(i, 0) - ma);
    sbb += (b(i, 0) - mb) * (b(i, 0) - mb);
  }
  return sab / std::sqrt(saa * sbb);
}

bool same_data(const Dataset& a, const Dataset& b) {
  if (!bit_equal(a.inputs, b.inputs) || a.split != b.split || a.tasks.size() != b.tasks.size()) return false;
  for (std::size_t t = 0; t < a.tasks.size(); ++t)
    if (!bit_equal(a.tasks[t].labels, b.tasks[t].labels)) return false;
  return true;
}

}  // namespace

TEST(Generate, FullyRelatedNoiselessTasksAgree) {
  auto fam = make_family(6, 1.0, {regression_task(0.0), regression_task(0.0)}, 1);
  Dataset d = generate(fam, 200, 2);
  EXPECT_TRUE(bit_equal(d.tasks[0].labels, d.tasks[1].labels));
}

TEST(Generate, SameSeedSameBits) {
  auto fam = make_family(6, 0.5, {regression_task(0.3), classification_task(4, 0.1)}, 3);
  Dataset a = generate(fam, 500, 9), b = generate(fam, 500, 9);
  EXPECT_TRUE(same_data(a, b));
  EXPECT_EQ(a.hash(), b.hash());
  Dataset c = generate(fam, 500, 10);
  EXPECT_NE(a.hash(), c.hash());
}

TEST(Generate, UnrelatedTasksAreUncorrelated) {
  auto fam = make_family(8, 0.0, {regression_task(0.1), regression_task(0.1)}, 4);
  Dataset d = generate(fam, 10000, 5);
  EXPECT_LT(std::abs(correlation(d.tasks[0].labels, d.tasks[1].labels)), 0.1);
}

TEST(Generate, CorrelationGrowsWithRelatedness) {
  std::vector<double> r;
  for (double rho : {0.0, 0.5, 1.0}) {
    auto fam = make_family(8, rho, {regression_task(0.1), regression_task(0.1)}, 6);
    Dataset d = generate(fam, 10000, 7);
    r.push_back(correlation(d.tasks[0].labels, d.tasks[1].labels));
  }
  EXPECT_LE(r[0], r[1]);
  EXPECT_LE(r[1], r[2]);
}

TEST(Generate, SplitsPartitionTheSamples) {
  auto fam = make_family(4, 0.9, {regression_task(0.1), regression_task(0.1)}, 8);
  Dataset d = generate(fam, 4000, 9);
  auto tr = d.indices(Split::train), va = d.indices(Split::val), te = d.indices(Split::test);
  EXPECT_EQ(tr.size(), 2800u);
  EXPECT_EQ(va.size(), 600u);
  EXPECT_EQ(te.size(), 600u);
  std::set<std::size_t> all(tr.begin(), tr.end());
  all.insert(va.begin(), va.end());
  all.insert(te.begin(), te.end());
  EXPECT_EQ(all.size(), 4000u);
}

TEST(Generate, ClassificationLabelsInRangeWithFlips) {
  auto clean = make_family(6, 0.7, {classification_task(3), classification_task(3)}, 10);
  auto noisy = make_family(6, 0.7, {classification_task(3, 0.2), classification_task(3)}, 10);
  Dataset a = generate(clean, 1000, 11), b = generate(noisy, 1000, 11);
  std::size_t differ = 0;
  for (std::size_t r = 0; r < 1000; ++r) {
    const double v = b.tasks[0].labels(r, 0);
    EXPECT_TRUE(v == 0 || v == 1 || v == 2);
    if (v != a.tasks[0].labels(r, 0)) ++differ;
  }
  EXPECT_EQ(differ, 200u);
}

TEST(Generate, Errors) {
  auto fam = make_family(4, 0.5, {regression_task(0.1)}, 1);
  EXPECT_THROW(generate(fam, 29, 1), ConfigError);
  EXPECT_THROW(make_family(0, 0.5, {regression_task(0.1)}, 1), ConfigError);
  EXPECT_THROW(make_family(1, 0.5, {regression_task(0.1), regression_task(0.1)}, 1), ConfigError);
  EXPECT_THROW(make_family(4, 1.5, {regression_task(0.1)}, 1), ConfigError);
  EXPECT_THROW(make_family(4, 0.5, {regression_task(0.1, 0)}, 1), ConfigError);
  EXPECT_THROW(make_family(4, 0.5, {classification_task(1)}, 1), ConfigError);
}

TEST(Csv, RoundTripIsBitExact) {
  auto fam = make_family(5, 0.6, {regression_task(0.2, 2), classification_task(4, 0.05)}, 12);
  Dataset d = generate(fam, 300, 13);
  std::stringstream ss;
  write_csv(d, ss);
  Dataset back = load_csv(ss, schema_of(d));
  EXPECT_TRUE(same_data(d, back));
  EXPECT_EQ(d.hash(), back.hash());
}

TEST(Csv, ManifestDescribesTheFile) {
  auto fam = make_family(5, 0.6, {regression_task(0.2), classification_task(4)}, 12);
  Dataset d = generate(fam, 100, 13);
  auto m = manifest(d);
  EXPECT_EQ(m["seed"], 13u);
  EXPECT_EQ(m["split_sizes"]["train"], 70u);
  std::stringstream ss;
  write_csv(d, ss);
  EXPECT_TRUE(same_data(d, load_csv(ss, schema_from_manifest(m))));
}

TEST(Csv, MalformedRowReportsLine) {
  std::stringstream ss("x0,y\n1,2\n3,oops\n");
  CsvSchema s{{"x0"}, {{"y", {HeadKind::regression, 1, LossKind::mse}, {"y"}}}, ""};
  try {
    load_csv(ss, s);
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 3u);
  }
  std::stringstream short_row("x0,y\n1,2\n3\n4,5\n");
  try {
    load_csv(short_row, s);
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 3u);
  }
}

TEST(Csv, MissingColumnIsSchemaError) {
  std::stringstream ss("x0,y\n1,2\n");
  CsvSchema s{{"x0", "x1"}, {{"y", {HeadKind::regression, 1, LossKind::mse}, {"y"}}}, ""};
  EXPECT_THROW(load_csv(ss, s), SchemaError);
}

TEST(Csv, ClassLabelOutOfRange) {
  std::stringstream ss("x0,c\n1,0\n2,3\n");
  CsvSchema s{{"x0"}, {{"c", {HeadKind::classification, 3, LossKind::cross_entropy}, {"c"}}}, ""};
  EXPECT_THROW(load_csv(ss, s), ParseError);
}

TEST(Csv, SeededSplitWithoutSplitColumn) {
  std::string text = "x0,y\n";
  for (int i = 0; i < 40; ++i) text += std::to_string(i) + "," + std::to_string(2 * i) + "\n";
  CsvSchema s{{"x0"}, {{"y", {HeadKind::regression, 1, LossKind::mse}, {"y"}}}, ""};
  std::stringstream a(text), b(text);
  Dataset da = load_csv(a, s, 5), db = load_csv(b, s, 5);
  EXPECT_EQ(da.split, db.split);
  EXPECT_EQ(da.indices(Split::train).size(), 28u);
}

TEST(Iterate, FourRowsTwoBatchesPartitionTheEpoch) {
  auto stream = iterate({0, 1, 2, 3}, 2, 7, true);
  auto epoch = stream.next_epoch();
  ASSERT_EQ(epoch.size(), 1u);
  std::set<std::size_t> w(epoch[0].w.begin(), epoch[0].w.end()), a(epoch[0].alpha.begin(), epoch[0].alpha.end());
  EXPECT_EQ(w.size(), 2u);
  EXPECT_EQ(a.size(), 2u);
  std::set<std::size_t> all = w;
  all.insert(a.begin(), a.end());
  EXPECT_EQ(all, (std::set<std::size_t>{0, 1, 2, 3}));
}

TEST(Iterate, DisjointOverAnEpoch) {
  std::vector<std::size_t> pool(101);
  for (std::size_t i = 0; i < pool.size(); ++i) pool[i] = 3 * i;
  auto stream = iterate(pool, 8, 3, true);
  for (int e = 0; e < 3; ++e) {
    std::set<std::size_t> seen;
    for (const auto& p : stream.next_epoch()) {
      for (auto i : p.w) EXPECT_TRUE(seen.insert(i).second);
      for (auto i : p.alpha) EXPECT_TRUE(seen.insert(i).second);
    }
    EXPECT_EQ(seen.size(), 96u);
  }
}

TEST(Iterate, PermutationIsSeeded) {
  std::vector<std::size_t> pool(50);
  for (std::size_t i = 0; i < 50; ++i) pool[i] = i;
  auto a = iterate(pool, 5, 11, false), b = iterate(pool, 5, 11, false), c = iterate(pool, 5, 12, false);
  auto ea = a.next_epoch(), eb = b.next_epoch(), ec = c.next_epoch();
  ASSERT_EQ(ea.size(), eb.size());
  bool differs = false;
  for (std::size_t i = 0; i < ea.size(); ++i) {
    EXPECT_EQ(ea[i].w, eb[i].w);
    differs = differs || ea[i].w != ec[i].w;
  }
  EXPECT_TRUE(differs);
  EXPECT_NE(a.next_epoch()[0].w, ea[0].w);
}

TEST(Iterate, BatchTooLarge) {
  EXPECT_THROW(iterate({0, 1, 2, 3, 4}, 3, 1, true), ConfigError);
  EXPECT_THROW(iterate({0, 1}, 3, 1, false), ConfigError);
  EXPECT_THROW(iterate({0, 1}, 0, 1, false), ConfigError);
}

TEST(Gather, RowsAndLabels) {
  auto fam = make_family(3, 0.5, {regression_task(0.1, 2), classification_task(3)}, 1);
  Dataset d = generate(fam, 40, 2);
  Batch b = gather(d, {5, 1});
  EXPECT_EQ(b.x(0, 2), d.inputs(5, 2));
  EXPECT_EQ(b.targets[0](1, 1), d.tasks[0].labels(1, 1));
  EXPECT_EQ(b.classes[1][0], static_cast<int>(d.tasks[1].labels(5, 0)));
  EXPECT_THROW(gather(d, {40}), ContractViolation);
}
