#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "shakelab/data.hpp"
#include "shakelab/model.hpp"

namespace shakelab {

enum class Precision { Single, Double };

std::string_view to_string(Precision p);
Precision parse_precision(std::string_view text);

struct WarmStart {
  double lr = 0.025;
  int epochs = 1;

  friend bool operator==(const WarmStart&, const WarmStart&) = default;
};

struct TrainConfig {
  int epochs = 30;
  int batch_size = 128;
  double lr0 = 0.2;
  std::optional<WarmStart> warm_start;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  std::uint64_t seed = 0;
  Precision precision = Precision::Single;
  // Deterministic runs write 0 in the metrics "seconds" column so that
  // identical configs produce identical files.
  bool deterministic = true;

  void validate() const;

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

// 0.5 * lr0 * (1 + cos(pi * t / T)) for 0 <= t <= T.
double cosine_lr(int t, int total, double lr0);

// Learning rate used during epoch t (0-based): the warm-start rate for the
// first warm_start.epochs epochs, then a cosine decay over the rest.
double scheduled_lr(const TrainConfig& config, int epoch);

struct EpochRecord {
  int epoch = 0;
  double lr = 0;
  double train_loss = 0;
  double train_err = 0;  // percent
  double test_err = 0;   // percent
  double seconds = 0;

  // Equality ignores wall time.
  bool same_result(const EpochRecord& o) const {
    return epoch == o.epoch && lr == o.lr && train_loss == o.train_loss &&
           train_err == o.train_err && test_err == o.test_err;
  }
};

inline constexpr const char* kMetricsHeader = "epoch,lr,train_loss,train_err,test_err,seconds";

std::string format_metrics_row(const EpochRecord& r, bool include_seconds);
void write_metrics_csv(const std::filesystem::path& path,
                       const std::vector<EpochRecord>& records, bool include_seconds);

// v <- momentum * v + g + weight_decay * theta (decay only for parameters
// flagged for it), theta <- theta - lr * v, then gradients are zeroed.
template <typename T>
class SgdOptimizer {
 public:
  SgdOptimizer(const ParamSet<T>& params, double momentum, double weight_decay);

  // Throws NumericError (leaving parameters untouched) if any gradient is
  // not finite.
  void step(ParamSet<T>& params, double lr);

  std::vector<Tensor<T>>& velocity() noexcept { return velocity_; }
  const std::vector<Tensor<T>>& velocity() const noexcept { return velocity_; }

 private:
  double momentum_;
  double weight_decay_;
  std::vector<Tensor<T>> velocity_;
};

struct EvalResult {
  double loss = 0;
  double error = 0;  // percent
};

// Test-phase evaluation: coefficients 0.5, batch norm on running statistics.
template <typename T>
EvalResult evaluate(Model<T>& model, const Dataset& data, const DatasetStats* stats,
                    std::size_t batch_size = 256);

// Counts argmax(logits[n]) != labels[n].
template <typename T>
std::size_t count_errors(const Tensor<T>& logits, std::span<const int> labels);

// Position in a run, enough to continue it exactly.
struct TrainProgress {
  int next_epoch = 0;
  long step = 0;
  std::uint64_t shake_counter = 0;
};

// One training loop. Per step: sample forward coefficients, forward, loss,
// sample backward coefficients, backward, SGD. Per epoch: test evaluation.
// Every random choice derives from config.seed.
template <typename T>
class Trainer {
 public:
  using EpochCallback = std::function<void(const EpochRecord&)>;

  Trainer(Model<T>& model, TrainConfig config, const Dataset& train,
          const Dataset& test, DatasetStats stats, bool augment);

  // Runs epochs until `until` (exclusive, defaults to config.epochs).
  // Throws DivergenceError on a non-finite loss or gradient.
  std::vector<EpochRecord> run(std::optional<int> until = std::nullopt,
                               const EpochCallback& on_epoch = {});
  EpochRecord run_epoch();

  const TrainProgress& progress() const noexcept { return progress_; }
  void restore(const TrainProgress& progress);

  Model<T>& model() noexcept { return *model_; }
  SgdOptimizer<T>& optimizer() noexcept { return optimizer_; }
  const TrainConfig& config() const noexcept { return config_; }
  const DatasetStats& stats() const noexcept { return stats_; }

 private:
  Model<T>* model_;
  TrainConfig config_;
  const Dataset* train_;
  const Dataset* test_;
  DatasetStats stats_;
  bool augment_;
  SgdOptimizer<T> optimizer_;
  ShakeSchedule schedule_;
  TrainProgress progress_;
};

// Stream identifiers under the run seed.
inline constexpr std::uint64_t kShakeStreamKey = 0x5AE5;
inline constexpr std::uint64_t kShuffleStreamKey = 0x5F1E;
inline constexpr std::uint64_t kAugmentStreamKey = 0xA119;

extern template class SgdOptimizer<float>;
extern template class SgdOptimizer<double>;
extern template class Trainer<float>;
extern template class Trainer<double>;

}  // namespace shakelab
