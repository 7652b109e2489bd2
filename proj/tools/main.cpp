#include <iostream>

#include "CLI11.hpp"
#include "commands.hpp"

int main(int argc, char** argv) {
  using namespace shakelab::cli;
  CLI::App app{"Shake-shake regularization lab"};
  app.require_subcommand(1);

  TrainArgs train;
  std::string resume;
  int stop_after = -1;
  auto* train_cmd = app.add_subcommand("train", "Train a model from a JSON run config");
  train_cmd->add_option("--config", train.config, "Run config")->required()->check(CLI::ExistingFile);
  train_cmd->add_option("--resume", resume, "Checkpoint to continue from")->check(CLI::ExistingFile);
  train_cmd->add_option("--stop-after", stop_after, "Stop after this many epochs");

  std::string ckpt, data;
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint on a test set");
  eval_cmd->add_option("--ckpt", ckpt, "Checkpoint")->required();
  eval_cmd->add_option("--data", data, "CIFAR-10 .bin file, run config .json or 'config'")
      ->required();

  bool alignment = false;
  auto* analyze_cmd = app.add_subcommand("analyze", "Branch output correlation of a checkpoint");
  analyze_cmd->add_option("--ckpt", ckpt, "Checkpoint")->required();
  analyze_cmd->add_option("--data", data, "CIFAR-10 .bin file, run config .json or 'config'")
      ->required();
  analyze_cmd->add_flag("--alignment", alignment, "Also write layer-wise alignment");

  bool corrupt = false;
  auto* verify_cmd = app.add_subcommand("verify", "Run the gradient and shake rule checks");
  verify_cmd->add_flag("--corrupt-backward", corrupt,
                       "Self-test: run against a broken backward rule (must fail)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  if (*train_cmd) {
    if (!resume.empty()) train.resume = resume;
    if (stop_after >= 0) train.stop_after = stop_after;
    return cmd_train(train, std::cout, std::cerr);
  }
  if (*eval_cmd) return cmd_eval(ckpt, data, std::cout, std::cerr);
  if (*analyze_cmd) return cmd_analyze(ckpt, data, alignment, std::cout, std::cerr);
  return cmd_verify(corrupt, std::cout, std::cerr);
}
