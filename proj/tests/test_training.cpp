#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "weakstrong/bench.hpp"
#include "weakstrong/config.hpp"
#include "weakstrong/cv.hpp"
#include "weakstrong/verify.hpp"

using namespace weakstrong;

namespace {

namespace fs = std::filesystem;

GenConfig harness_config(std::uint64_t seed) {
  GenConfig cfg = default_gen_config();
  cfg.n_bags = 30;
  cfg.instances_per_bag = 10;
  cfg.n_strong = 120;
  cfg.seed = seed;
  return cfg;
}

std::string slurp(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
}

bool reports_equal(const RunReport& a, const RunReport& b) {
  if (a.folds.size() != b.folds.size()) return false;
  for (std::size_t i = 0; i < a.folds.size(); ++i) {
    if (a.folds[i].auc != b.folds[i].auc || a.folds[i].accuracy != b.folds[i].accuracy ||
        a.folds[i].kendall_tau != b.folds[i].kendall_tau || a.folds[i].seed != b.folds[i].seed) {
      return false;
    }
  }
  return a.mean_auc == b.mean_auc && a.std_auc == b.std_auc && a.mean_tau == b.mean_tau;
}

}  // namespace

TEST(FoldPlans, PartitionAndStratification) {
  const GenConfig gen = harness_config(5);
  const Dataset ds = generate_dataset(gen);
  EvalConfig eval;
  const auto plans = make_fold_plans(ds.bags, eval, 17);
  ASSERT_EQ(plans.size(), 5u);
  std::set<std::size_t> seen;
  for (const FoldPlan& p : plans) {
    for (std::size_t bi : p.test) EXPECT_TRUE(seen.insert(bi).second);
    // train/holdout/test partition the bags
    EXPECT_EQ(p.train.size() + p.holdout.size() + p.test.size(), ds.bags.size());
    EXPECT_FALSE(p.holdout.empty());
  }
  EXPECT_EQ(seen.size(), ds.bags.size());
}

TEST(FoldPlans, SingleClassDataIsStratificationError) {
  GenConfig gen = harness_config(7);
  gen.group_weights = {1.0, 0.0, 0.0, 0.0, 0.0};  // all bags low
  const Dataset ds = generate_dataset(gen);
  EvalConfig eval;
  EXPECT_THROW(make_fold_plans(ds.bags, eval, 3), ConfigError);
}

TEST(FoldPlans, TooFewBagsRejected) {
  GenConfig gen = harness_config(9);
  gen.n_bags = 8;  // fewer than 2 * folds
  const Dataset ds = generate_dataset(gen);
  EvalConfig eval;
  EXPECT_THROW(make_fold_plans(ds.bags, eval, 3), ConfigError);
}

// A hand-built Bayes-style predictor (class high iff the first feature is
// positive) must reach AUC 1.0 on a well-separated config: the upper bound
// for the slide-score + metric path, independent of training.
TEST(CvHarness, OracleParamsReachPerfectAuc) {
  GenConfig gen = harness_config(11);
  gen.shift = AffineShift{};
  gen.group_weights = {0.5, 0.0, 0.0, 0.0, 0.5};
  gen.benign_fraction = 0.0;
  for (std::size_t i = 0; i < 4; ++i) {
    gen.pattern_stats[i].mean.assign(gen.input_dim, 0.0);
    gen.pattern_stats[i].std_dev.assign(gen.input_dim, 0.4);
  }
  gen.pattern_stats[0].mean[0] = -3.0;
  gen.pattern_stats[1].mean[0] = -3.0;
  gen.pattern_stats[2].mean[0] = 3.0;
  gen.pattern_stats[3].mean[0] = 3.0;
  const Dataset ds = generate_dataset(gen);

  ModelParams oracle_params;
  Tensor2D w(gen.input_dim, 2, 0.0);
  w.at(0, 0) = -5.0;
  w.at(0, 1) = 5.0;
  oracle_params.weights.push_back(w);
  oracle_params.biases.emplace_back(1, 2);

  std::vector<std::size_t> all_bags(ds.bags.size());
  std::iota(all_bags.begin(), all_bags.end(), std::size_t{0});
  std::vector<double> scores;
  std::vector<int> labels, groups;
  score_test_bags(oracle_params, ds.bags, all_bags, scores, labels, groups);
  EXPECT_DOUBLE_EQ(roc_auc(scores, labels), 1.0);
  EXPECT_DOUBLE_EQ(kendall_tau(scores, groups), 1.0);
}

TEST(CvHarness, DeterministicReports) {
  const GenConfig gen = harness_config(13);
  const Dataset ds = generate_dataset(gen);
  ModelConfig model;
  SchemeConfig scheme;
  scheme.weak_batch = 32;
  scheme.strong_batch = 16;
  ShiftConfig shift;
  EvalConfig eval;
  StopPolicy stop;
  stop.max_epochs = 4;
  const RunReport a = cv_harness(ds, model, scheme, shift, eval, stop, 21);
  const RunReport b = cv_harness(ds, model, scheme, shift, eval, stop, 21);
  EXPECT_TRUE(reports_equal(a, b));
}

TEST(CvHarness, WorkerCountDoesNotChangeResults) {
  const GenConfig gen = harness_config(15);
  const Dataset ds = generate_dataset(gen);
  ModelConfig model;
  SchemeConfig scheme;
  scheme.weak_batch = 32;
  scheme.strong_batch = 16;
  ShiftConfig shift;
  StopPolicy stop;
  stop.max_epochs = 3;
  EvalConfig serial;
  serial.workers = 1;
  EvalConfig parallel;
  parallel.workers = 4;
  const RunReport a = cv_harness(ds, model, scheme, shift, serial, stop, 23);
  const RunReport b = cv_harness(ds, model, scheme, shift, parallel, stop, 23);
  EXPECT_TRUE(reports_equal(a, b));
}

TEST(BenchRows, IntegrationTableOrderAndStructure) {
  ExperimentConfig cfg;
  cfg.seed = 1;
  const auto rows = benchmark_rows(cfg, BenchTable::integration);
  ASSERT_EQ(rows.size(), 6u);
  EXPECT_EQ(rows[0].name, "w-only");
  EXPECT_EQ(rows[1].name, "w-only-mil");
  EXPECT_EQ(rows[2].name, "w-only-swws");
  EXPECT_EQ(rows[3].name, "w+s");
  EXPECT_EQ(rows[4].name, "w+s-mil");
  EXPECT_EQ(rows[5].name, "w+s-swws");
  EXPECT_FALSE(rows[0].scheme.use_strong);
  EXPECT_TRUE(rows[3].scheme.use_strong);
  EXPECT_EQ(rows[2].scheme.weak_mode, WeakMode::sw_ws);
  EXPECT_EQ(rows[4].scheme.weak_mode, WeakMode::mil_ws);
}

TEST(BenchRows, ShiftTableOrderAndLadder) {
  ExperimentConfig cfg;
  cfg.seed = 1;
  const auto rows = benchmark_rows(cfg, BenchTable::shift);
  ASSERT_EQ(rows.size(), 6u);
  EXPECT_EQ(rows[0].name, "s-only");
  EXPECT_EQ(rows[1].name, "s-only-jitter");
  EXPECT_EQ(rows[2].name, "s-only-stain");
  EXPECT_EQ(rows[3].name, "mmd");
  EXPECT_EQ(rows[4].name, "coral");
  EXPECT_EQ(rows[5].name, "adversarial");
  for (const BenchRow& r : rows) {
    EXPECT_TRUE(r.scheme.use_strong);
    EXPECT_FALSE(r.scheme.use_weak);
  }
  EXPECT_EQ(rows[0].shift.mode, ShiftMode::none);
  EXPECT_EQ(rows[5].shift.mode, ShiftMode::adversarial);
}

TEST(Benchmark, TinyIntegrationRunWritesArtifactsAndResumes) {
  ExperimentConfig cfg;
  cfg.seed = 4242;
  cfg.gen = default_gen_config();
  cfg.gen.n_bags = 20;
  cfg.gen.instances_per_bag = 8;
  cfg.gen.n_strong = 80;
  cfg.gen.seed = 4242;
  cfg.scheme.weak_batch = 32;
  cfg.scheme.strong_batch = 16;
  cfg.stop.max_epochs = 2;

  const fs::path dir = fs::temp_directory_path() / "ws_bench_tiny";
  fs::remove_all(dir);
  const BenchResult first = run_benchmark(cfg, BenchTable::integration, dir.string());
  EXPECT_EQ(first.rows.size(), 6u);
  EXPECT_EQ(first.reused_parts, 0u);
  for (const char* name : {"report.json", "report.csv", "table.txt", "manifest.json"}) {
    EXPECT_TRUE(fs::exists(dir / name)) << name;
  }
  // 6 rows x 5 folds part files
  std::size_t parts = 0;
  for (const auto& e : fs::directory_iterator(dir / "parts")) {
    (void)e;
    ++parts;
  }
  EXPECT_EQ(parts, 30u);

  // resume: everything is reused, outputs unchanged
  const std::string report_before = slurp(dir / "report.json");
  const BenchResult second = run_benchmark(cfg, BenchTable::integration, dir.string());
  EXPECT_EQ(second.reused_parts, 30u);
  EXPECT_EQ(slurp(dir / "report.json"), report_before);

  // fresh directory reproduces every output byte-for-byte
  const fs::path dir2 = fs::temp_directory_path() / "ws_bench_tiny2";
  fs::remove_all(dir2);
  (void)run_benchmark(cfg, BenchTable::integration, dir2.string());
  for (const char* name : {"report.json", "report.csv", "table.txt", "manifest.json"}) {
    EXPECT_EQ(slurp(dir / name), slurp(dir2 / name)) << name;
  }
  fs::remove_all(dir);
  fs::remove_all(dir2);
}

TEST(Benchmark, ShiftTableRequiresImageSubstrate) {
  ExperimentConfig cfg;
  cfg.seed = 99;
  cfg.gen.seed = 99;
  EXPECT_THROW(run_benchmark(cfg, BenchTable::shift, "/tmp/ws_should_not_exist"), ConfigError);
}

TEST(Benchmark, ImageShiftRowsTrainEndToEnd) {
  // tiny image-substrate dataset; every augmentation / penalty row must run
  ExperimentConfig cfg;
  cfg.seed = 31;
  cfg.gen = default_gen_config();
  cfg.gen.substrate = Substrate::images;
  cfg.gen.shift = AffineShift{};
  cfg.gen.n_bags = 20;
  cfg.gen.instances_per_bag = 6;
  cfg.gen.n_strong = 48;
  cfg.gen.seed = 31;
  cfg.gen.image.candidate_patches = 8;
  cfg.scheme.weak_batch = 24;
  cfg.scheme.strong_batch = 12;
  cfg.stop.max_epochs = 2;
  cfg.eval.workers = 2;

  const fs::path dir = fs::temp_directory_path() / "ws_bench_shift";
  fs::remove_all(dir);
  const BenchResult res = run_benchmark(cfg, BenchTable::shift, dir.string());
  ASSERT_EQ(res.rows.size(), 6u);
  for (const auto& [name, report] : res.rows) {
    EXPECT_EQ(report.folds.size(), 5u) << name;
    for (const FoldMetrics& m : report.folds) {
      EXPECT_TRUE(std::isfinite(m.auc)) << name;
    }
  }
  fs::remove_all(dir);
}

TEST(TrainHoldoutSplit, StratifiedAndDisjoint) {
  const GenConfig gen = harness_config(17);
  const Dataset ds = generate_dataset(gen);
  const auto [train, holdout] = train_holdout_split(ds.bags, 0.2, 77);
  EXPECT_EQ(train.size() + holdout.size(), ds.bags.size());
  std::set<std::size_t> t(train.begin(), train.end());
  for (std::size_t h : holdout) EXPECT_FALSE(t.count(h));
  bool lo = false, hi = false;
  for (std::size_t h : holdout) {
    (ds.bags[h].weak_label == kLabelHigh ? hi : lo) = true;
  }
  EXPECT_TRUE(lo);
  EXPECT_TRUE(hi);
}

TEST(ReportFormat, TableLayout) {
  RunReport r;
  r.folds.resize(5);
  r.mean_auc = 0.9123;
  r.std_auc = 0.0456;
  r.mean_accuracy = 0.8;
  r.std_accuracy = 0.05;
  r.mean_tau = 0.55;
  r.std_tau = 0.07;
  const std::string table = format_report_table({{"w+s-swws", r}});
  EXPECT_NE(table.find("scheme"), std::string::npos);
  EXPECT_NE(table.find("w+s-swws"), std::string::npos);
  EXPECT_NE(table.find("0.912 (+- 0.046)"), std::string::npos);
}
