#include <gtest/gtest.h>

#include <cmath>

#include "shakelab/checkpoint.hpp"
#include "shakelab/errors.hpp"
#include "shakelab/train.hpp"

using namespace shakelab;

namespace {

TEST(Cosine, EndpointsAndMidpointAreExact) {
  for (int T : {2, 10, 30, 1800}) {
    EXPECT_EQ(cosine_lr(0, T, 0.2), 0.2);
    EXPECT_EQ(cosine_lr(T / 2, T, 0.2), 0.1);
    EXPECT_EQ(cosine_lr(T, T, 0.2), 0.0);
    for (int t = 1; t <= T; ++t) ASSERT_LE(cosine_lr(t, T, 0.2), cosine_lr(t - 1, T, 0.2));
  }
  EXPECT_THROW(cosine_lr(-1, 10, 0.2), UsageError);
  EXPECT_THROW(cosine_lr(11, 10, 0.2), UsageError);
}

TEST(Cosine, WarmStartThenCosine) {
  TrainConfig c;
  c.epochs = 11;
  c.lr0 = 0.2;
  c.warm_start = WarmStart{0.025, 1};
  EXPECT_EQ(scheduled_lr(c, 0), 0.025);
  EXPECT_EQ(scheduled_lr(c, 1), 0.2);
  EXPECT_EQ(scheduled_lr(c, 6), 0.1);
  c.warm_start.reset();
  EXPECT_EQ(scheduled_lr(c, 0), 0.2);
}

TEST(TrainConfig, Validation) {
  TrainConfig c;
  EXPECT_NO_THROW(c.validate());
  c.momentum = 1.0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.warm_start = WarmStart{0.1, 30};
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Metrics, RowFormatAndDeterministicSeconds) {
  EpochRecord r{3, 0.1, 1.25, 12.5, 20.0, 4.5678};
  EXPECT_EQ(format_metrics_row(r, true), "3,0.1,1.25,12.500000,20.000000,4.568");
  EXPECT_EQ(format_metrics_row(r, false), "3,0.1,1.25,12.500000,20.000000,0.000");
}

TEST(Sgd, MomentumAndDecayedUpdate) {
  ParamSet<double> ps;
  ps.add("w", Tensor<double>({2}, std::vector<double>{1.0, -2.0}), true);
  ps.add("b", Tensor<double>({1}, std::vector<double>{0.5}), false);
  SgdOptimizer<double> opt(ps, 0.9, 0.1);
  ps.get("w").grad = Tensor<double>({2}, std::vector<double>{0.5, 0.5});
  ps.get("b").grad = Tensor<double>({1}, std::vector<double>{1.0});
  opt.step(ps, 0.1);
  // v = g + wd * w; w -= lr * v
  EXPECT_DOUBLE_EQ(ps.get("w").value[0], 1.0 - 0.1 * (0.5 + 0.1));
  EXPECT_DOUBLE_EQ(ps.get("w").value[1], -2.0 - 0.1 * (0.5 - 0.2));
  EXPECT_DOUBLE_EQ(ps.get("b").value[0], 0.5 - 0.1);
  EXPECT_EQ(ps.get("w").grad[0], 0.0);
  const double w1 = ps.get("w").value[0];
  const double v1 = 0.5 + 0.1;
  ps.get("w").grad[0] = 0.25;
  opt.step(ps, 0.1);
  EXPECT_DOUBLE_EQ(ps.get("w").value[0], w1 - 0.1 * (0.9 * v1 + 0.25 + 0.1 * w1));
}

TEST(Sgd, NonFiniteGradientLeavesParametersUntouched) {
  ParamSet<double> ps;
  ps.add("a", Tensor<double>({2}, 1.0), true);
  ps.add("b", Tensor<double>({2}, 1.0), true);
  SgdOptimizer<double> opt(ps, 0.9, 0.0);
  ps.get("a").grad = Tensor<double>({2}, 1.0);
  ps.get("b").grad = Tensor<double>({2}, std::nan(""));
  EXPECT_THROW(opt.step(ps, 0.1), NumericError);
  EXPECT_EQ(ps.get("a").value, (Tensor<double>({2}, 1.0)));
  EXPECT_EQ(opt.velocity()[0], (Tensor<double>({2}, 0.0)));
}

TEST(Evaluate, CountsArgmaxErrors) {
  Tensor<float> logits({3, 2}, std::vector<float>{1, 0, 0, 1, 2, 3});
  const std::vector<int> labels{0, 0, 1};
  EXPECT_EQ(count_errors(logits, std::span<const int>(labels)), 1u);
}

struct SmallRun {
  ModelSpec spec;
  TrainConfig cfg;
  Dataset train, test;
  DatasetStats stats;

  explicit SmallRun(const char* shake = "S-S-I", int epochs = 3) {
    spec.depth = 8;
    spec.base_width = 4;
    spec.num_classes = 4;
    spec.shake = ShakeConfig::from_short_name(shake);
    cfg.epochs = epochs;
    cfg.batch_size = 16;
    cfg.lr0 = 0.1;
    cfg.seed = 21;
    train = synthetic_dataset(4, 64, 1, 8);
    test = synthetic_dataset(4, 32, 2, 8);
    stats = compute_stats(train);
  }
};

template <typename T>
void expect_same_params(const Model<T>& a, const Model<T>& b) {
  for (std::size_t i = 0; i < a.params().size(); ++i)
    ASSERT_EQ(a.params()[i].value, b.params()[i].value) << a.params()[i].name;
  for (std::size_t i = 0; i < a.buffers().size(); ++i)
    ASSERT_EQ(a.buffers()[i].value, b.buffers()[i].value) << a.buffers()[i].name;
}

TEST(Trainer, IdenticalSeedsGiveIdenticalRuns) {
  SmallRun run;
  Model<float> m1(run.spec, run.cfg.seed), m2(run.spec, run.cfg.seed);
  Trainer<float> t1(m1, run.cfg, run.train, run.test, run.stats, true);
  Trainer<float> t2(m2, run.cfg, run.train, run.test, run.stats, true);
  const auto r1 = t1.run(), r2 = t2.run();
  ASSERT_EQ(r1.size(), 3u);
  for (std::size_t i = 0; i < r1.size(); ++i) EXPECT_TRUE(r1[i].same_result(r2[i]));
  expect_same_params(m1, m2);
  EXPECT_EQ(t1.progress().step, 12);
}

TEST(Trainer, SeedChangesTrajectory) {
  SmallRun run;
  Model<float> m1(run.spec, 1), m2(run.spec, 1);
  auto cfg2 = run.cfg;
  cfg2.seed += 1;
  Trainer<float> t1(m1, run.cfg, run.train, run.test, run.stats, true);
  Trainer<float> t2(m2, cfg2, run.train, run.test, run.stats, true);
  EXPECT_NE(t1.run(1)[0].train_loss, t2.run(1)[0].train_loss);
}

TEST(Trainer, ResumeFromCheckpointMatchesUninterruptedRun) {
  SmallRun run("S-S-I", 4);
  const auto path = std::filesystem::path(SHAKELAB_TEST_TMP) / "resume.ckpt";
  std::filesystem::create_directories(path.parent_path());

  Model<double> full_model(run.spec, run.cfg.seed);
  Trainer<double> full(full_model, run.cfg, run.train, run.test, run.stats, true);
  const auto full_records = full.run();

  Model<double> first_model(run.spec, run.cfg.seed);
  Trainer<double> first(first_model, run.cfg, run.train, run.test, run.stats, true);
  auto records = first.run(2);
  CheckpointMeta meta;
  meta.progress = first.progress();
  save_checkpoint(path, first_model, &first.optimizer(), meta);

  Model<double> resumed_model(run.spec, 999);
  Trainer<double> resumed(resumed_model, run.cfg, run.train, run.test, run.stats, true);
  const auto ckpt = read_checkpoint(path);
  apply_checkpoint(ckpt, resumed_model, &resumed.optimizer());
  resumed.restore(ckpt.meta.progress);
  for (const auto& r : resumed.run()) records.push_back(r);

  ASSERT_EQ(records.size(), full_records.size());
  for (std::size_t i = 0; i < records.size(); ++i)
    EXPECT_TRUE(records[i].same_result(full_records[i])) << i;
  expect_same_params(resumed_model, full_model);
}

TEST(Trainer, LearnsSyntheticTask) {
  ModelSpec spec;
  spec.depth = 8;
  spec.base_width = 8;
  spec.num_classes = 4;
  spec.shake = ShakeConfig::from_short_name("E-E-B");
  TrainConfig cfg;
  cfg.epochs = 6;
  cfg.batch_size = 32;
  cfg.lr0 = 0.1;
  cfg.seed = 3;
  const auto train = synthetic_dataset(4, 256, 1, 16);
  const auto test = synthetic_dataset(4, 128, 2, 16);
  Model<float> m(spec, cfg.seed);
  Trainer<float> t(m, cfg, train, test, compute_stats(train), false);
  const auto records = t.run();
  EXPECT_LT(records.back().test_err, 5.0);
  EXPECT_LT(records.back().train_loss, records.front().train_loss);
}

TEST(Trainer, DivergenceCarriesEpochAndStep) {
  SmallRun run("S-S-I", 3);
  run.cfg.lr0 = 1e12;
  run.cfg.momentum = 0.0;
  Model<float> m(run.spec, 1);
  Trainer<float> t(m, run.cfg, run.train, run.test, run.stats, false);
  try {
    t.run();
    FAIL() << "expected divergence";
  } catch (const DivergenceError& e) {
    EXPECT_EQ(e.epoch(), 0);
    EXPECT_GE(e.step(), 0);
    EXPECT_NE(std::string(e.what()).find("step"), std::string::npos);
  }
}

TEST(Trainer, RunPastEndIsRejected) {
  SmallRun run("E-E-B", 1);
  Model<float> m(run.spec, 1);
  Trainer<float> t(m, run.cfg, run.train, run.test, run.stats, false);
  EXPECT_THROW(t.run(2), UsageError);
  t.run();
  EXPECT_THROW(t.run_epoch(), UsageError);
}

}  // namespace
