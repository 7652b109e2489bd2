#pragma once

#include <filesystem>
#include <optional>
#include <ostream>
#include <string>

namespace shakelab::cli {

enum ExitCode : int {
  kExitOk = 0,
  kExitUsage = 1,  // bad arguments, config, data or checkpoint
  kExitDivergence = 2,
  kExitVerifyFailed = 3,
};

// Overrides every command's output directory when set.
inline constexpr const char* kOutputDirEnv = "SHAKELAB_OUTPUT_DIR";

struct TrainArgs {
  std::filesystem::path config;
  std::optional<std::filesystem::path> resume;
  // Stop once this many epochs are complete (the run can be resumed later).
  std::optional<int> stop_after;
};

// Writes resolved_config.json, metrics.csv (after every epoch), last.ckpt
// (after every epoch) and final.ckpt. On divergence also writes
// divergence.json.
int cmd_train(const TrainArgs& args, std::ostream& out, std::ostream& err);

// data is a CIFAR-10 .bin file, a run config .json whose test set is used,
// or "config" for the test set of the run stored in the checkpoint.
// Writes eval.json next to the checkpoint.
int cmd_eval(const std::filesystem::path& ckpt, const std::string& data,
             std::ostream& out, std::ostream& err);

// Writes correlation.csv and, with alignment, alignment.csv.
int cmd_analyze(const std::filesystem::path& ckpt, const std::string& data,
                bool alignment, std::ostream& out, std::ostream& err);

int cmd_verify(bool corrupt_backward, std::ostream& out, std::ostream& err);

}  // namespace shakelab::cli
