#include "shakelab/train.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>

#include "shakelab/errors.hpp"
#include "shakelab/ops.hpp"

namespace shakelab {

std::string_view to_string(Precision p) {
  return p == Precision::Single ? "single" : "double";
}

Precision parse_precision(std::string_view text) {
  if (text == "single") return Precision::Single;
  if (text == "double") return Precision::Double;
  throw ConfigError("train.precision: expected 'single' or 'double', got '" +
                    std::string(text) + "'");
}

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("train.epochs must be at least 1");
  if (batch_size < 1) throw ConfigError("train.batch_size must be at least 1");
  if (!(lr0 > 0)) throw ConfigError("train.lr0 must be positive");
  if (!(momentum >= 0 && momentum < 1)) {
    throw ConfigError("train.momentum must lie in [0, 1)");
  }
  if (!(weight_decay >= 0)) throw ConfigError("train.weight_decay must be non-negative");
  if (warm_start) {
    if (!(warm_start->lr > 0)) throw ConfigError("train.warm_start.lr must be positive");
    if (warm_start->epochs < 0 || warm_start->epochs >= epochs) {
      throw ConfigError("train.warm_start.epochs must lie in [0, train.epochs)");
    }
  }
}

double cosine_lr(int t, int total, double lr0) {
  if (total < 1) throw UsageError("cosine_lr needs a positive horizon");
  if (t < 0 || t > total) {
    throw UsageError("cosine_lr: epoch " + std::to_string(t) + " outside [0, " +
                     std::to_string(total) + "]");
  }
  return 0.5 * lr0 *
         (1.0 + std::cos(std::numbers::pi *
                         (static_cast<double>(t) / static_cast<double>(total))));
}

double scheduled_lr(const TrainConfig& config, int epoch) {
  int offset = 0;
  if (config.warm_start && config.warm_start->epochs > 0) {
    if (epoch < config.warm_start->epochs) return config.warm_start->lr;
    offset = config.warm_start->epochs;
  }
  return cosine_lr(epoch - offset, config.epochs - offset, config.lr0);
}

std::string format_metrics_row(const EpochRecord& r, bool include_seconds) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%d,%.9g,%.9g,%.6f,%.6f,%.3f", r.epoch, r.lr,
                r.train_loss, r.train_err, r.test_err,
                include_seconds ? r.seconds : 0.0);
  return buf;
}

void write_metrics_csv(const std::filesystem::path& path,
                       const std::vector<EpochRecord>& records, bool include_seconds) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out << kMetricsHeader << '\n';
  for (const auto& r : records) out << format_metrics_row(r, include_seconds) << '\n';
}

template <typename T>
SgdOptimizer<T>::SgdOptimizer(const ParamSet<T>& params, double momentum,
                              double weight_decay)
    : momentum_(momentum), weight_decay_(weight_decay) {
  velocity_.reserve(params.size());
  for (const auto& p : params) velocity_.emplace_back(p.value.shape());
}

template <typename T>
void SgdOptimizer<T>::step(ParamSet<T>& params, double lr) {
  if (params.size() != velocity_.size()) {
    throw UsageError("optimizer was built for a different parameter set");
  }
  for (const auto& p : params) {
    if (!p.grad.all_finite()) {
      throw NumericError("non-finite gradient for parameter " + p.name);
    }
  }
  const T m = static_cast<T>(momentum_);
  const T step = static_cast<T>(lr);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Parameter<T>& p = params[i];
    Tensor<T>& v = velocity_[i];
    const T wd = p.decay ? static_cast<T>(weight_decay_) : T{0};
    for (std::size_t k = 0; k < p.value.size(); ++k) {
      v[k] = m * v[k] + p.grad[k] + wd * p.value[k];
      p.value[k] -= step * v[k];
    }
    p.grad.fill(T{0});
  }
}

template <typename T>
std::size_t count_errors(const Tensor<T>& logits, std::span<const int> labels) {
  const std::size_t N = logits.dim(0), K = logits.dim(1);
  std::size_t wrong = 0;
  for (std::size_t n = 0; n < N; ++n) {
    const T* row = logits.data() + n * K;
    const auto best = static_cast<int>(std::max_element(row, row + K) - row);
    wrong += best != labels[n];
  }
  return wrong;
}

template <typename T>
EvalResult evaluate(Model<T>& model, const Dataset& data, const DatasetStats* stats,
                    std::size_t batch_size) {
  if (data.empty()) throw UsageError("cannot evaluate on an empty dataset");
  RngStream unused;
  BatchOptions opts;
  opts.stats = stats;
  BatchIterator<T> it(data, batch_size, false, unused, opts);
  Batch<T> batch;
  double loss = 0;
  std::size_t wrong = 0;
  while (it.next(batch)) {
    Tape<T> tape;
    Var<T> x = tape.input(std::move(batch.images));
    Var<T> logits = model.forward(tape, x, Phase::Test);
    Var<T> l = ops::softmax_cross_entropy(logits, batch.labels, ops::Reduction::Sum);
    loss += l.value()[0];
    wrong += count_errors(logits.value(), batch.labels);
  }
  const double n = static_cast<double>(data.size());
  return {loss / n, 100.0 * static_cast<double>(wrong) / n};
}

template <typename T>
Trainer<T>::Trainer(Model<T>& model, TrainConfig config, const Dataset& train,
                    const Dataset& test, DatasetStats stats, bool augment)
    : model_(&model),
      config_(config),
      train_(&train),
      test_(&test),
      stats_(std::move(stats)),
      augment_(augment),
      optimizer_(model.params(), config.momentum, config.weight_decay),
      schedule_(model.spec().shake, RngStream::derive(config.seed, {kShakeStreamKey})) {
  config_.validate();
  if (train.empty()) throw UsageError("training set is empty");
  if (test.empty()) throw UsageError("test set is empty");
}

template <typename T>
void Trainer<T>::restore(const TrainProgress& progress) {
  if (progress.next_epoch < 0 || progress.next_epoch > config_.epochs) {
    throw UsageError("cannot resume at epoch " + std::to_string(progress.next_epoch));
  }
  progress_ = progress;
  schedule_.rng().set_counter(progress.shake_counter);
}

template <typename T>
EpochRecord Trainer<T>::run_epoch() {
  const int epoch = progress_.next_epoch;
  if (epoch >= config_.epochs) throw UsageError("training already finished");
  const auto start = std::chrono::steady_clock::now();
  const double lr = scheduled_lr(config_, epoch);

  RngStream shuffle = RngStream::derive(config_.seed,
                                        {kShuffleStreamKey, static_cast<std::uint64_t>(epoch)});
  BatchOptions opts;
  opts.stats = &stats_;
  opts.augment = augment_;
  opts.augment_seed = RngStream::derive(config_.seed, {kAugmentStreamKey}).seed();
  opts.epoch = static_cast<std::uint64_t>(epoch);
  BatchIterator<T> it(*train_, static_cast<std::size_t>(config_.batch_size), true,
                      shuffle, opts);

  double loss_sum = 0;
  std::size_t wrong = 0, seen = 0;
  Batch<T> batch;
  while (it.next(batch)) {
    const std::size_t n = batch.labels.size();
    try {
      schedule_.sample_forward(model_->coefficients(), n);
      Tape<T> tape;
      Var<T> x = tape.input(std::move(batch.images));
      Var<T> logits = model_->forward(tape, x, Phase::Train);
      Var<T> loss = ops::softmax_cross_entropy(logits, batch.labels);
      schedule_.sample_backward(model_->coefficients());
      tape.backward(loss);
      optimizer_.step(model_->params(), lr);
      loss_sum += static_cast<double>(loss.value()[0]) * static_cast<double>(n);
      wrong += count_errors(logits.value(), batch.labels);
      seen += n;
    } catch (const NumericError& e) {
      throw DivergenceError("training diverged at epoch " + std::to_string(epoch) +
                                ", step " + std::to_string(progress_.step) + ": " +
                                e.what(),
                            epoch, progress_.step);
    }
    ++progress_.step;
  }

  EpochRecord r;
  r.epoch = epoch;
  r.lr = lr;
  r.train_loss = loss_sum / static_cast<double>(seen);
  r.train_err = 100.0 * static_cast<double>(wrong) / static_cast<double>(seen);
  try {
    r.test_err = evaluate(*model_, *test_, &stats_).error;
  } catch (const NumericError& e) {
    throw DivergenceError("evaluation diverged after epoch " + std::to_string(epoch) +
                              ": " + e.what(),
                          epoch, progress_.step);
  }
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
                  .count();
  progress_.next_epoch = epoch + 1;
  progress_.shake_counter = schedule_.rng().counter();
  return r;
}

template <typename T>
std::vector<EpochRecord> Trainer<T>::run(std::optional<int> until,
                                         const EpochCallback& on_epoch) {
  const int last = until.value_or(config_.epochs);
  if (last > config_.epochs) throw UsageError("cannot train past train.epochs");
  std::vector<EpochRecord> out;
  while (progress_.next_epoch < last) {
    out.push_back(run_epoch());
    if (on_epoch) on_epoch(out.back());
  }
  return out;
}

template class SgdOptimizer<float>;
template class SgdOptimizer<double>;
template class Trainer<float>;
template class Trainer<double>;
template EvalResult evaluate(Model<float>&, const Dataset&, const DatasetStats*,
                             std::size_t);
template EvalResult evaluate(Model<double>&, const Dataset&, const DatasetStats*,
                             std::size_t);
template std::size_t count_errors(const Tensor<float>&, std::span<const int>);
template std::size_t count_errors(const Tensor<double>&, std::span<const int>);

}  // namespace shakelab
