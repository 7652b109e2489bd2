#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "commands.hpp"
#include "json.hpp"
#include "shakelab/errors.hpp"
#include "shakelab/run_config.hpp"

using namespace shakelab;
using namespace shakelab::cli;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

fs::path fresh_dir(const std::string& name) {
  const fs::path dir = fs::path(SHAKELAB_TEST_TMP) / "cli" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

json quick_config(const fs::path& out_dir, const char* shake = "S-S-I") {
  const auto sc = ShakeConfig::from_short_name(shake);
  return json{
      {"model", {{"family", "shake_resnet"}, {"depth", 8}, {"base_width", 4},
                 {"num_classes", 4}}},
      {"shake", {{"forward", std::string(to_string(sc.forward))},
                 {"backward", std::string(to_string(sc.backward))},
                 {"level", std::string(to_string(sc.level))}}},
      {"train", {{"epochs", 3}, {"batch_size", 16}, {"lr0", 0.1}, {"seed", 5},
                 {"deterministic", true}}},
      {"data", {{"source", "synthetic"},
                {"synthetic", {{"num_classes", 4}, {"train_size", 64}, {"test_size", 32},
                               {"image_size", 8}, {"seed", 2}}}}},
      {"output_dir", out_dir.string()}};
}

fs::path write_config(const fs::path& dir, const json& j, const char* name = "run.json") {
  const fs::path p = dir / name;
  std::ofstream(p) << j.dump(2);
  return p;
}

std::size_t line_count(const std::string& text) {
  return static_cast<std::size_t>(std::count(text.begin(), text.end(), '\n'));
}

std::string parse_error(const std::string& text) {
  try {
    parse_run_config(text);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return {};
}

TEST(RunConfig, UnknownKeysAndBadValuesNameTheField) {
  EXPECT_NE(parse_error(R"({"train":{"epochz":3}})").find("train.epochz"), std::string::npos);
  EXPECT_NE(parse_error(R"({"shake":{"alpha_lo":0.8,"alpha_hi":0.2}})").find("alpha"),
            std::string::npos);
  EXPECT_NE(parse_error(R"({"train":{"epochs":2.5}})").find("train.epochs"),
            std::string::npos);
  EXPECT_NE(parse_error(R"({"model":{"family":"vgg"}})").find("model.family"),
            std::string::npos);
  EXPECT_FALSE(parse_error("{not json").empty());
  EXPECT_TRUE(parse_error("{}").empty());
}

TEST(RunConfig, DumpRoundTrips) {
  const fs::path dir = fresh_dir("roundtrip");
  const RunConfig a = parse_run_config(quick_config(dir).dump(), dir);
  const std::string dumped = dump_run_config(a);
  const RunConfig b = parse_run_config(dumped, dir);
  EXPECT_TRUE(a.model == b.model && a.train == b.train && a.data == b.data);
  EXPECT_EQ(dump_run_config(b), dumped);
}

class CliRun : public ::testing::Test {
 protected:
  void SetUp() override { unsetenv(kOutputDirEnv); }
  void TearDown() override { unsetenv(kOutputDirEnv); }

  int train(const fs::path& config, std::optional<fs::path> resume = std::nullopt,
            std::optional<int> stop = std::nullopt) {
    out_.str({});
    err_.str({});
    return cmd_train({config, resume, stop}, out_, err_);
  }

  std::ostringstream out_, err_;
};

TEST_F(CliRun, TrainWritesArtifactsAndEvalMatchesFinalEpoch) {
  const fs::path dir = fresh_dir("train");
  const auto cfg = write_config(dir, quick_config(dir));
  ASSERT_EQ(train(cfg), kExitOk) << err_.str();
  for (const char* f : {"resolved_config.json", "metrics.csv", "last.ckpt", "final.ckpt"})
    EXPECT_TRUE(fs::exists(dir / f)) << f;
  const std::string metrics = slurp(dir / "metrics.csv");
  EXPECT_EQ(line_count(metrics), 4u);
  EXPECT_EQ(metrics.substr(0, metrics.find('\n')), kMetricsHeader);

  ASSERT_EQ(cmd_eval(dir / "final.ckpt", "config", out_, err_), kExitOk) << err_.str();
  const json first = json::parse(slurp(dir / "eval.json"));
  EXPECT_EQ(first["images"], 32);
  const std::string last_row = metrics.substr(metrics.rfind('\n', metrics.size() - 2) + 1);
  std::vector<std::string> cols;
  std::stringstream row(last_row);
  for (std::string c; std::getline(row, c, ',');) cols.push_back(c);
  ASSERT_EQ(cols.size(), 6u);
  EXPECT_NEAR(first["error"].get<double>(), std::stod(cols[4]), 1e-6);

  ASSERT_EQ(cmd_eval(dir / "final.ckpt", cfg.string(), out_, err_), kExitOk);
  EXPECT_EQ(json::parse(slurp(dir / "eval.json"))["error"], first["error"]);
  EXPECT_EQ(json::parse(slurp(dir / "eval.json"))["loss"], first["loss"]);
}

TEST_F(CliRun, AnalyzeWritesCsvs) {
  const fs::path dir = fresh_dir("analyze");
  ASSERT_EQ(train(write_config(dir, quick_config(dir))), kExitOk);
  ASSERT_EQ(cmd_analyze(dir / "final.ckpt", "config", true, out_, err_), kExitOk)
      << err_.str();
  const std::string corr = slurp(dir / "correlation.csv");
  EXPECT_EQ(corr.substr(0, corr.find('\n')), "block,correlation");
  EXPECT_EQ(line_count(corr), 1u + 3u);
  const std::string align = slurp(dir / "alignment.csv");
  EXPECT_EQ(align.substr(0, align.find('\n')), "block,m,n,correlation");
  EXPECT_EQ(line_count(align), 1u + 3u * 9u);
}

TEST_F(CliRun, IdenticalRunsGiveByteIdenticalMetrics) {
  const fs::path a = fresh_dir("det_a"), b = fresh_dir("det_b");
  ASSERT_EQ(train(write_config(a, quick_config(a))), kExitOk);
  ASSERT_EQ(train(write_config(b, quick_config(b))), kExitOk);
  EXPECT_EQ(slurp(a / "metrics.csv"), slurp(b / "metrics.csv"));
}

TEST_F(CliRun, StopAndResumeReproducesMetrics) {
  const fs::path full = fresh_dir("full"), part = fresh_dir("part");
  ASSERT_EQ(train(write_config(full, quick_config(full))), kExitOk);
  const auto cfg = write_config(part, quick_config(part));
  ASSERT_EQ(train(cfg, std::nullopt, 1), kExitOk);
  EXPECT_FALSE(fs::exists(part / "final.ckpt"));
  EXPECT_EQ(line_count(slurp(part / "metrics.csv")), 2u);
  ASSERT_EQ(train(cfg, part / "last.ckpt"), kExitOk) << err_.str();
  EXPECT_EQ(slurp(part / "metrics.csv"), slurp(full / "metrics.csv"));
}

TEST_F(CliRun, ResumeWithDifferentConfigIsRejected) {
  const fs::path dir = fresh_dir("mismatch");
  ASSERT_EQ(train(write_config(dir, quick_config(dir)), std::nullopt, 1), kExitOk);
  auto other = quick_config(dir);
  other["train"]["seed"] = 6;
  EXPECT_EQ(train(write_config(dir, other, "other.json"), dir / "last.ckpt"), kExitUsage);
  EXPECT_NE(err_.str().find("error:"), std::string::npos);
}

TEST_F(CliRun, OutputDirectoryOverride) {
  const fs::path dir = fresh_dir("override"), target = fresh_dir("override_target");
  setenv(kOutputDirEnv, target.c_str(), 1);
  ASSERT_EQ(train(write_config(dir, quick_config(dir / "ignored"))), kExitOk);
  EXPECT_TRUE(fs::exists(target / "final.ckpt"));
  EXPECT_FALSE(fs::exists(dir / "ignored"));
}

TEST_F(CliRun, BadInputsExitWithUsageCode) {
  const fs::path dir = fresh_dir("bad");
  EXPECT_EQ(train(dir / "missing.json"), kExitUsage);
  std::ofstream(dir / "broken.json") << "{\"train\": {\"epochs\": -1}}";
  EXPECT_EQ(train(dir / "broken.json"), kExitUsage);
  EXPECT_EQ(cmd_eval(dir / "missing.ckpt", "config", out_, err_), kExitUsage);
  std::ofstream(dir / "junk.ckpt") << "not a checkpoint";
  EXPECT_EQ(cmd_analyze(dir / "junk.ckpt", "config", false, out_, err_), kExitUsage);
  EXPECT_NE(err_.str().find("error:"), std::string::npos);
}

TEST_F(CliRun, DoublePrecisionRunEvaluates) {
  const fs::path dir = fresh_dir("double");
  auto j = quick_config(dir);
  j["train"]["precision"] = "double";
  j["train"]["epochs"] = 1;
  ASSERT_EQ(train(write_config(dir, j)), kExitOk) << err_.str();
  EXPECT_EQ(cmd_eval(dir / "final.ckpt", "config", out_, err_), kExitOk) << err_.str();
}

TEST_F(CliRun, DivergenceWritesReport) {
  const fs::path dir = fresh_dir("diverge");
  auto j = quick_config(dir);
  j["train"]["lr0"] = 1e12;
  j["train"]["momentum"] = 0.0;
  EXPECT_EQ(train(write_config(dir, j)), kExitDivergence);
  const json report = json::parse(slurp(dir / "divergence.json"));
  EXPECT_EQ(report["epoch"], 0);
  EXPECT_TRUE(report.contains("step"));
  EXPECT_NE(err_.str().find("diverged"), std::string::npos);
}

TEST_F(CliRun, ArchCNarrowAlphaCompletesOrReportsDivergence) {
  const fs::path dir = fresh_dir("arch_c");
  auto j = quick_config(dir);
  j["model"]["family"] = "arch_c";
  j["model"]["depth"] = 14;
  j["shake"]["alpha_lo"] = 0.30;
  j["shake"]["alpha_hi"] = 0.70;
  j["train"]["lr0"] = 0.4;
  const int code = train(write_config(dir, j));
  EXPECT_TRUE(code == kExitOk || code == kExitDivergence) << err_.str();
  if (code == kExitDivergence) EXPECT_TRUE(fs::exists(dir / "divergence.json"));
}

TEST_F(CliRun, CorruptedBackwardFailsVerification) {
  EXPECT_EQ(cmd_verify(true, out_, err_), kExitVerifyFailed);
  EXPECT_NE(out_.str().find("FAIL"), std::string::npos);
}

}  // namespace
