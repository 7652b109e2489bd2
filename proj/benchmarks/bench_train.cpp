#include <benchmark/benchmark.h>

#include "shakelab/data.hpp"
#include "shakelab/model.hpp"
#include "shakelab/ops.hpp"
#include "shakelab/train.hpp"

using namespace shakelab;

namespace {

// One SGD step on a batch of 32 synthetic 32x32 images. Args: depth, width.
void BM_TrainStep(benchmark::State& state) {
  ModelSpec spec;
  spec.depth = static_cast<int>(state.range(0));
  spec.base_width = static_cast<int>(state.range(1));
  spec.shake = ShakeConfig::from_short_name("S-S-I");
  Model<float> model(spec, 1);
  SgdOptimizer<float> opt(model.params(), 0.9, 1e-4);
  ShakeSchedule sched(spec.shake, RngStream(2));
  const Dataset data = synthetic_dataset(10, 32, 3, 32);
  const DatasetStats stats = compute_stats(data);
  std::vector<std::size_t> idx(data.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  BatchOptions bopts;
  bopts.stats = &stats;
  const Batch<float> batch = assemble_batch<float>(data, idx, bopts);
  for (auto _ : state) {
    sched.sample_forward(model.coefficients(), batch.labels.size());
    Tape<float> tape;
    Var<float> logits = model.forward(tape, tape.input(batch.images), Phase::Train);
    Var<float> loss = ops::softmax_cross_entropy(logits, batch.labels);
    sched.sample_backward(model.coefficients());
    tape.backward(loss);
    opt.step(model.params(), 0.01);
    benchmark::DoNotOptimize(loss.value().data());
  }
  state.SetItemsProcessed(state.iterations() * 32);
}
BENCHMARK(BM_TrainStep)->Args({8, 16})->Args({14, 32})->Unit(benchmark::kMillisecond);

void BM_EvalForward(benchmark::State& state) {
  ModelSpec spec;
  spec.depth = 14;
  spec.base_width = 32;
  Model<float> model(spec, 1);
  const Dataset data = synthetic_dataset(10, 64, 3, 32);
  const DatasetStats stats = compute_stats(data);
  for (auto _ : state) {
    benchmark::DoNotOptimize(evaluate(model, data, &stats, 64).loss);
  }
  state.SetItemsProcessed(state.iterations() * 64);
}
BENCHMARK(BM_EvalForward)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
