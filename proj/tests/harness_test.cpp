#include <algorithm>
#include <cmath>
#include <filesystem>
#include <sstream>

#include <gtest/gtest.h>

#include "seqcl/harness/config.hpp"
#include "seqcl/harness/experiment.hpp"
#include "seqcl/harness/optimizer.hpp"
#include "seqcl/harness/report.hpp"
#include "seqcl/harness/train.hpp"
#include "support.hpp"

using namespace seqcl;

namespace {

ModelConfig small_model() {
  ModelConfig m;
  m.feature_dim = 4;
  m.alphabet = 6;
  m.hidden = 8;
  m.enc_layers = 1;
  return m;
}

ExperimentConfig quick(const std::string& method) {
  ExperimentConfig x;
  x.method = method;
  x.model = small_model();
  x.train.max_epochs = 2;
  x.train.patience = 2;
  x.train.snapshot_count = 1;
  x.train.batch_size = 6;
  x.train.test_decode = {DecodeMode::CtcGreedy, 1};
  x.memory = MemoryPolicy::growing(6);
  x.hyper.lambda = 0.5;
  x.hyper.importance_samples = 4;
  return x;
}

std::vector<TaskDataset> first(std::vector<TaskDataset> all, std::size_t n) {
  all.resize(n);
  return all;
}

// Gradient goes non-finite on the third step.
class Poison : public Strategy {
 public:
  Poison() : Strategy("FT", {}) {}
  ParamVector transform_grad(ParamVector g, StepContext&) override {
    if (++calls_ == 3) g[0][0] = NAN;
    return g;
  }

 private:
  int calls_ = 0;
};

}  // namespace

TEST(Optimizer, NoamPeaksAtWarmup) {
  const NoamSchedule s{2.0, 256.0, 100};
  EXPECT_NEAR(s(100), 2.0 / 16.0 / 10.0, 1e-15);
  EXPECT_LT(s(50), s(100));
  EXPECT_LT(s(400), s(100));
  EXPECT_NEAR(s(400), 2.0 / 16.0 / 20.0, 1e-15);
  EXPECT_EQ(s(0), s(1));
}

TEST(Optimizer, AdamFirstStepMovesByLearningRate) {
  ParamVector theta;
  theta.add("w", Tensor::vector({1.0, -1.0}));
  Adam opt(theta, {}, NoamSchedule{1.0, 1.0, 1});
  ParamVector g = theta;
  g[0][0] = 3.0;
  g[0][1] = -0.5;
  EXPECT_DOUBLE_EQ(opt.step(theta, g), std::sqrt(9.25));
  EXPECT_NEAR(theta[0][0], 0.0, 1e-8);
  EXPECT_NEAR(theta[0][1], 0.0, 1e-8);
  g[0][0] = INFINITY;
  EXPECT_THROW(opt.step(theta, g), NumericError);
}

TEST(Train, ZeroEpochsReturnsInitialParameters) {
  const HybridModel m(small_model());
  const auto fam = test::small_family(3);
  TrainConfig cfg;
  cfg.max_epochs = 0;
  Strategy ft("FT", {});
  std::mt19937_64 rng(1);
  const ParamVector init = m.init();
  const auto r = train_task(m, init, task_samples(fam[0].train, 0), fam[0].valid, ft, nullptr, cfg, 1.0, rng);
  EXPECT_EQ(r.theta, init);
  EXPECT_TRUE(r.history.empty());
}

TEST(Train, ValidationErrorFalls) {
  const HybridModel m(small_model());
  const auto fam = test::small_family(4, 48);
  TrainConfig cfg;
  cfg.max_epochs = 12;
  cfg.patience = 12;
  cfg.snapshot_count = 1;
  cfg.batch_size = 6;
  cfg.warmup_steps = 20;
  Strategy ft("FT", {});
  std::mt19937_64 rng(2);
  const double before = evaluate_set(m, m.init(), fam[0].valid, cfg.valid_decode).wer;
  const auto r = train_task(m, m.init(), task_samples(fam[0].train, 0), fam[0].valid, ft, nullptr, cfg, 10.0, rng);
  EXPECT_EQ(r.history.size(), 12u);
  EXPECT_LT(r.best_valid_ter, before);
  EXPECT_LT(r.history.back().train_loss, r.history.front().train_loss);
}

TEST(Train, EarlyStoppingAndSnapshots) {
  const HybridModel m(small_model());
  const auto fam = test::small_family(4);
  TrainConfig cfg;
  cfg.max_epochs = 30;
  cfg.patience = 1;
  cfg.snapshot_count = 3;
  cfg.batch_size = 8;
  cfg.lr_factor_first = 1e-6;
  Strategy ft("FT", {});
  std::mt19937_64 rng(2);
  const auto r = train_task(m, m.init(), task_samples(fam[0].train, 0), fam[0].valid, ft, nullptr, cfg, 1e-6, rng);
  EXPECT_TRUE(r.early_stopped);
  EXPECT_LT(r.history.size(), 30u);
  EXPECT_LE(r.snapshots_averaged, 3u);
}

TEST(Train, DivergenceIsReportedWithDump) {
  const HybridModel m(small_model());
  const auto fam = test::small_family(4);
  TrainConfig cfg;
  cfg.max_epochs = 2;
  cfg.patience = 2;
  cfg.batch_size = 4;
  const auto dir = std::filesystem::temp_directory_path() / "seqcl_diverge_test";
  std::filesystem::create_directories(dir);
  cfg.diagnostic_dir = dir.string();
  Poison p;
  std::mt19937_64 rng(1);
  try {
    train_task(m, m.init(), task_samples(fam[0].train, 0), fam[0].valid, p, nullptr, cfg, 1.0, rng);
    FAIL() << "expected divergence";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("step 2"), std::string::npos) << e.what();
  }
  EXPECT_TRUE(std::filesystem::exists(dir / "diverged.ckpt"));
  std::filesystem::remove_all(dir);
}

TEST(Train, InvalidConfig) {
  TrainConfig c;
  c.batch_size = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.max_epochs = 3;
  c.patience = 4;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Experiment, DeterministicForFixedSeed) {
  const auto tasks = first(test::small_family(6), 2);
  const auto a = run_sequence(quick("EWC"), tasks, 7);
  const auto b = run_sequence(quick("EWC"), tasks, 7);
  EXPECT_EQ(a.theta, b.theta);
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t j = 0; j <= i; ++j) EXPECT_EQ(a.R(i, j), b.R(i, j));
  const auto c = run_sequence(quick("EWC"), tasks, 8);
  EXPECT_FALSE(a.theta == c.theta);
}

TEST(Experiment, SingleTaskHasNullTransferMetrics) {
  const auto r = run_sequence(quick("FT"), first(test::small_family(6), 1), 1);
  const Json j = result_to_json(r);
  EXPECT_TRUE(j["bwt"].is_null());
  EXPECT_TRUE(j["fwt"].is_null());
  EXPECT_TRUE(j["cov"].is_null());
  EXPECT_EQ(j["R"].size(), 1u);
  EXPECT_DOUBLE_EQ(j["storage_ledger"]["model_equivalents"].get<double>(), 1.0);
}

TEST(Experiment, RehearsalReadsOnlyMemoryAndCurrentTask) {
  const auto tasks = first(test::small_family(6), 3);
  const auto r = run_sequence(quick("ER"), tasks, 2);
  EXPECT_EQ(r.audit.foreign_reads, 0u);
  EXPECT_EQ(r.audit.joint_reads, 0u);
  EXPECT_GT(r.audit.memory_reads, 0u);
  ASSERT_TRUE(r.memory_report.has_value());
  EXPECT_EQ(r.memory_report->memory_size, 6u);
  EXPECT_LT(r.storage[0].model_equivalents(), r.storage[2].model_equivalents());

  const auto cjt = run_sequence(quick("CJT"), tasks, 2);
  EXPECT_GT(cjt.audit.joint_reads, 0u);
  EXPECT_EQ(cjt.audit.foreign_reads, 0u);
}

TEST(Experiment, FixedMemoryStorageIsConstant) {
  auto x = quick("KD");
  x.memory = MemoryPolicy::fixed(6);
  const auto r = run_sequence(x, first(test::small_family(6), 3), 1);
  EXPECT_EQ(r.memory_entries, (std::vector<std::size_t>{6, 6, 6}));
  const auto g = run_sequence(quick("KD"), first(test::small_family(6), 3), 1);
  EXPECT_EQ(g.memory_entries, (std::vector<std::size_t>{6, 12, 18}));
}

TEST(Experiment, CallbackSeesEveryTask) {
  std::vector<std::size_t> seen;
  const auto r = run_sequence(quick("FT"), first(test::small_family(6), 2), 1,
                              [&](std::size_t t, const ParamVector&) { seen.push_back(t); });
  EXPECT_EQ(seen, (std::vector<std::size_t>{0, 1}));
}

TEST(Experiment, MismatchedTasksAreRejected) {
  auto x = quick("FT");
  x.model.feature_dim = 5;
  EXPECT_THROW(run_sequence(x, first(test::small_family(6), 1), 1), DataError);
  auto er = quick("ER");
  er.memory = MemoryPolicy::growing(0);
  EXPECT_THROW(run_sequence(er, first(test::small_family(6), 1), 1), ConfigError);
}

TEST(Experiment, MemoryReportRejectsOverlap) {
  const HybridModel m(small_model());
  const auto fam = test::small_family(2);
  ExemplarMemory mem(MemoryPolicy::growing(4), 1);
  mem.task_end_update(fam[0].test, 0);
  EXPECT_THROW(memory_generalization_report(m, m.init(), mem, 0, fam[0].test, {}), DataError);
  EXPECT_THROW(memory_generalization_report(m, m.init(), mem, 1, fam[0].test, {}), ConfigError);
}

TEST(Config, ParsesAndRejectsUnknownKeys) {
  std::istringstream ok(
      "[experiment]\nmethod = EWC\nseeds = 1, 2\nlambda = auto\n"
      "[memory]\npolicy = fixed\nsize = 10\n"
      "[model]\nhidden = 8\nfeature_dim = 4\nalphabet = 6\n"
      "[train]\nmax_epochs = 3\npatience = 2\nvalid_decode = ctc\n"
      "[family]\nseed = 3\ntrain = 5\nvalid = 2\ntest = 2\n");
  const auto f = parse_experiment(ok);
  EXPECT_EQ(f.exp.method, "EWC");
  EXPECT_EQ(f.exp.seeds, (std::vector<std::uint64_t>{1, 2}));
  EXPECT_TRUE(f.exp.hyper.lambda_auto);
  EXPECT_EQ(f.exp.memory.kind, MemoryPolicy::Kind::Fixed);
  EXPECT_EQ(f.exp.train.max_epochs, 3u);
  ASSERT_TRUE(f.family.has_value());
  EXPECT_EQ(f.load_tasks().size(), 4u);

  std::istringstream typo("[experiment]\nmethod = FT\n[train]\npatince = 3\n[family]\nseed = 1\n");
  try {
    parse_experiment(typo);
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("patince"), std::string::npos);
  }
  std::istringstream nolambda("[experiment]\nmethod = EWC\n[family]\nseed = 1\n");
  EXPECT_THROW(parse_experiment(nolambda), ConfigError);
  std::istringstream both("[experiment]\nmethod = FT\n[tasks]\npaths = a.data\n[family]\nseed = 1\n");
  EXPECT_THROW(parse_experiment(both), ConfigError);
  std::istringstream badmode("[experiment]\nmethod = FT\n[train]\ntest_decode = greedy\n[family]\nseed = 1\n");
  EXPECT_THROW(parse_experiment(badmode), ConfigError);
}

TEST(Report, JsonRoundTrip) {
  const auto tasks = first(test::small_family(6), 2);
  const auto ft = run_sequence(quick("FT"), tasks, 1);
  const auto cjt = run_sequence(quick("CJT"), tasks, 1);
  const auto kd = run_sequence(quick("KD"), tasks, 1);
  const Json j = result_to_json(kd, &ft.R, &cjt.R);
  EXPECT_EQ(j["result_version"], 1);
  EXPECT_FALSE(j["fwt"].is_null());
  const auto rec = record_from_json(Json::parse(j.dump()));
  EXPECT_EQ(rec.method, "KD");
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t k = 0; k <= i; ++k) {
      EXPECT_EQ(rec.R(i, k), kd.R(i, k));
      EXPECT_EQ(rec.R.cell(i, k).errors(), kd.R.cell(i, k).errors());
    }
  Json bad = j;
  bad["result_version"] = 2;
  EXPECT_THROW(record_from_json(bad), VersionError);
  bad = j;
  bad.erase("R");
  EXPECT_THROW(record_from_json(bad), DataError);

  const std::vector<ResultRecord> recs{record_from_json(result_to_json(ft)), record_from_json(result_to_json(cjt)), rec};
  const auto summary = summarize(recs);
  ASSERT_EQ(summary.size(), 3u);
  for (const auto& s : summary) {
    EXPECT_EQ(s.seeds, 1u);
    if (s.method == "FT" && s.cov) {
      EXPECT_NEAR(*s.cov, 0.0, 1e-12);
    }
    if (s.method == "KD") {
      EXPECT_TRUE(s.p_vs_ft.has_value());
    }
  }
  std::ostringstream csv;
  write_curves_csv(csv, task_curves(recs));
  const std::string text = csv.str();
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 7);
}

TEST(Report, MedianOfSeeds) {
  EXPECT_DOUBLE_EQ(median({3, 1, 2}), 2.0);
  EXPECT_DOUBLE_EQ(median({4, 1, 2, 3}), 2.5);
  EXPECT_TRUE(std::isnan(median({})));
}
