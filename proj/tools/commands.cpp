#include "commands.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>

#include "json.hpp"
#include "shakelab/analysis.hpp"
#include "shakelab/checkpoint.hpp"
#include "shakelab/errors.hpp"
#include "shakelab/run_config.hpp"
#include "shakelab/train.hpp"
#include "shakelab/verify.hpp"

namespace shakelab::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::optional<fs::path> output_override() {
  const char* v = std::getenv(kOutputDirEnv);
  if (v && *v) return fs::path(v);
  return std::nullopt;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw Error("cannot write " + path.string());
  f << text;
  if (!f) throw Error("failed writing " + path.string());
}

std::string num(double v, const char* format = "%.9g") {
  char buf[64];
  std::snprintf(buf, sizeof buf, format, v);
  return buf;
}

// Runs body, mapping library errors to exit codes and messages.
template <typename F>
int guarded(std::ostream& err, F&& body) {
  try {
    return body();
  } catch (const DivergenceError& e) {
    err << "error: training diverged at epoch " << e.epoch() << ", step " << e.step()
        << ": " << e.what() << "\n";
    return kExitDivergence;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  }
}

bool same_run(const RunConfig& a, const RunConfig& b) {
  return a.model == b.model && a.train == b.train && a.data == b.data;
}

template <typename T>
int train_run(const RunConfig& cfg, const TrainArgs& args, std::ostream& out,
              std::ostream& err) {
  LoadedData data = load_data(cfg);
  Model<T> model(cfg.model, cfg.train.seed);
  Trainer<T> trainer(model, cfg.train, data.train, data.test, data.stats, cfg.data.augment);

  CheckpointMeta meta;
  meta.config_json = dump_run_config(cfg);
  meta.model_dtype = std::string(to_string(cfg.train.precision));
  meta.stats = data.stats;
  if (args.resume) {
    const Checkpoint ckpt = read_checkpoint(*args.resume);
    const RunConfig stored = parse_run_config(ckpt.meta.config_json);
    if (!same_run(stored, cfg)) {
      throw ConfigError("checkpoint " + args.resume->string() +
                        " was written by a different run configuration");
    }
    apply_checkpoint(ckpt, model, &trainer.optimizer());
    trainer.restore(ckpt.meta.progress);
    meta.history = ckpt.meta.history;
    if (meta.history.size() != static_cast<std::size_t>(ckpt.meta.progress.next_epoch)) {
      throw FormatError("checkpoint history does not match its progress");
    }
    out << "resuming at epoch " << ckpt.meta.progress.next_epoch << "\n";
  }

  const fs::path dir = cfg.output_dir;
  const bool seconds = !cfg.train.deterministic;
  const auto save = [&](const fs::path& path) {
    meta.progress = trainer.progress();
    save_checkpoint(path, model, &trainer.optimizer(), meta);
  };

  out << model.spec().name() << ", " << count_params(model) << " parameters, "
      << data.train.size() << " train / " << data.test.size() << " test images\n";
  int until = cfg.train.epochs;
  if (args.stop_after) until = std::min(until, std::max(*args.stop_after, 0));
  try {
    trainer.run(until, [&](const EpochRecord& r) {
      meta.history.push_back(r);
      write_metrics_csv(dir / "metrics.csv", meta.history, seconds);
      save(dir / "last.ckpt");
      out << "epoch " << r.epoch << " lr " << num(r.lr) << " loss " << num(r.train_loss)
          << " train_err " << num(r.train_err, "%.2f") << "% test_err "
          << num(r.test_err, "%.2f") << "%\n";
    });
  } catch (const DivergenceError& e) {
    json report = {{"epoch", e.epoch()}, {"step", e.step()}, {"message", e.what()}};
    write_text(dir / "divergence.json", report.dump(2) + "\n");
    throw;
  }
  write_metrics_csv(dir / "metrics.csv", meta.history, seconds);
  if (trainer.progress().next_epoch == cfg.train.epochs) {
    save(dir / "final.ckpt");
    out << "wrote " << (dir / "final.ckpt").string() << "\n";
  } else {
    out << "stopped after epoch " << trainer.progress().next_epoch - 1 << "; resume from "
        << (dir / "last.ckpt").string() << "\n";
  }
  return kExitOk;
}

struct StoredRun {
  Checkpoint ckpt;
  RunConfig config;
};

StoredRun load_stored(const fs::path& path) {
  StoredRun s;
  s.ckpt = read_checkpoint(path);
  s.config = parse_run_config(s.ckpt.meta.config_json);
  return s;
}

Dataset resolve_data(const std::string& data, const RunConfig& stored) {
  if (data == "config") return load_test_data(stored);
  const fs::path p(data);
  if (p.extension() == ".json") return load_test_data(load_run_config(p));
  return read_cifar10_bin(p);
}

fs::path output_dir_for(const fs::path& ckpt) {
  if (auto o = output_override()) return *o;
  const fs::path parent = ckpt.parent_path();
  return parent.empty() ? fs::path(".") : parent;
}

template <typename T>
Model<T> restore_model(const StoredRun& run) {
  Model<T> model(run.config.model, run.config.train.seed);
  apply_checkpoint<T>(run.ckpt, model, nullptr);
  return model;
}

const DatasetStats* stats_of(const StoredRun& run) {
  return run.ckpt.meta.stats.mean.empty() ? nullptr : &run.ckpt.meta.stats;
}

template <typename T>
int eval_run(const StoredRun& run, const fs::path& ckpt, const std::string& data_arg,
             std::ostream& out) {
  Model<T> model = restore_model<T>(run);
  const Dataset data = resolve_data(data_arg, run.config);
  const EvalResult r = evaluate(model, data, stats_of(run));
  const fs::path dir = output_dir_for(ckpt);
  fs::create_directories(dir);
  json report = {{"checkpoint", ckpt.string()}, {"data", data_arg},
                 {"images", data.size()},       {"loss", r.loss},
                 {"error", r.error}};
  write_text(dir / "eval.json", report.dump(2) + "\n");
  out << "images " << data.size() << " loss " << num(r.loss) << " error "
      << num(r.error, "%.4f") << "%\n";
  return kExitOk;
}

template <typename T>
int analyze_run(const StoredRun& run, const fs::path& ckpt, const std::string& data_arg,
                bool alignment, std::ostream& out) {
  Model<T> model = restore_model<T>(run);
  const Dataset data = resolve_data(data_arg, run.config);
  const CorrelationReport report =
      branch_correlation(model, data, stats_of(run), {64, alignment});
  const fs::path dir = output_dir_for(ckpt);
  fs::create_directories(dir);
  write_correlation_csv(dir / "correlation.csv", report);
  if (alignment) write_alignment_csv(dir / "alignment.csv", report);
  out << report.model << " over " << report.images << " images\n";
  for (std::size_t i = 0; i < report.correlation.size(); ++i) {
    const auto& c = report.correlation[i];
    out << "block " << i << " correlation " << (c ? num(*c, "%.6f") : "undefined") << "\n";
  }
  out << "wrote " << (dir / "correlation.csv").string() << "\n";
  return kExitOk;
}

}  // namespace

int cmd_train(const TrainArgs& args, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    RunConfig cfg = load_run_config(args.config);
    if (auto o = output_override()) cfg.output_dir = *o;
    fs::create_directories(cfg.output_dir);
    write_text(cfg.output_dir / "resolved_config.json", dump_run_config(cfg));
    return cfg.train.precision == Precision::Single ? train_run<float>(cfg, args, out, err)
                                                    : train_run<double>(cfg, args, out, err);
  });
}

int cmd_eval(const fs::path& ckpt, const std::string& data, std::ostream& out,
             std::ostream& err) {
  return guarded(err, [&] {
    const StoredRun run = load_stored(ckpt);
    return run.ckpt.meta.model_dtype == "double" ? eval_run<double>(run, ckpt, data, out)
                                                 : eval_run<float>(run, ckpt, data, out);
  });
}

int cmd_analyze(const fs::path& ckpt, const std::string& data, bool alignment,
                std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const StoredRun run = load_stored(ckpt);
    return run.ckpt.meta.model_dtype == "double"
               ? analyze_run<double>(run, ckpt, data, alignment, out)
               : analyze_run<float>(run, ckpt, data, alignment, out);
  });
}

int cmd_verify(bool corrupt_backward, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    VerifyOptions opts;
    opts.corrupt_backward = corrupt_backward;
    const auto checks = run_verification(opts, &out);
    std::size_t failed = 0;
    for (const auto& c : checks) failed += c.passed ? 0 : 1;
    out << checks.size() - failed << "/" << checks.size() << " checks passed\n";
    return failed == 0 ? kExitOk : kExitVerifyFailed;
  });
}

}  // namespace shakelab::cli
