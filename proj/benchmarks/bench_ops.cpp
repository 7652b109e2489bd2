#include <benchmark/benchmark.h>

#include "shakelab/ops.hpp"
#include "shakelab/rng.hpp"
#include "shakelab/shake.hpp"

using namespace shakelab;

namespace {

Tensor<float> randn(Shape shape, std::uint64_t seed) {
  RngStream rng(seed);
  Tensor<float> t(std::move(shape));
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<float>(rng.normal());
  return t;
}

// Args: batch, channels, spatial size.
void BM_Conv3x3Forward(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto c = static_cast<std::size_t>(state.range(1));
  const auto s = static_cast<std::size_t>(state.range(2));
  const Tensor<float> x = randn({n, c, s, s}, 1);
  Parameter<float> k{"k", randn({c, c, 3, 3}, 2), Tensor<float>({c, c, 3, 3}), true};
  for (auto _ : state) {
    Tape<float> tape;
    Var<float> y = ops::conv2d(tape.input(x), tape.parameter(k), {1, 1});
    benchmark::DoNotOptimize(y.value().data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(2 * n * c * c * 9 * s * s));
}
BENCHMARK(BM_Conv3x3Forward)->Args({32, 32, 32})->Args({32, 64, 16})->Args({32, 128, 8})
    ->Unit(benchmark::kMillisecond);

void BM_Conv3x3ForwardBackward(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto c = static_cast<std::size_t>(state.range(1));
  const auto s = static_cast<std::size_t>(state.range(2));
  const Tensor<float> x = randn({n, c, s, s}, 1);
  Parameter<float> k{"k", randn({c, c, 3, 3}, 2), Tensor<float>({c, c, 3, 3}), true};
  for (auto _ : state) {
    Tape<float> tape;
    Var<float> in = tape.input(x, true);
    Var<float> y = ops::sum(ops::conv2d(in, tape.parameter(k), {1, 1}));
    tape.backward(y);
    benchmark::DoNotOptimize(k.grad.data());
  }
}
BENCHMARK(BM_Conv3x3ForwardBackward)->Args({32, 32, 32})->Args({32, 128, 8})
    ->Unit(benchmark::kMillisecond);

void BM_ShakeCombine(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const Tensor<float> a = randn({n, 32, 32, 32}, 3), b = randn({n, 32, 32, 32}, 4);
  const auto cfg = ShakeConfig::from_short_name("S-S-I");
  ShakeSchedule sched(cfg, RngStream(5));
  std::vector<ShakeCoefficients> coeffs(1);
  for (auto _ : state) {
    sched.sample_forward(coeffs, n);
    Tape<float> tape;
    Var<float> y = shake_combine(Var<float>{}, tape.input(a, true), tape.input(b, true),
                                 coeffs[0], Phase::Train);
    sched.sample_backward(coeffs);
    tape.backward(ops::sum(y));
    benchmark::DoNotOptimize(y.value().data());
  }
}
BENCHMARK(BM_ShakeCombine)->Arg(32)->Arg(128)->Unit(benchmark::kMicrosecond);

void BM_BatchNormTrain(benchmark::State& state) {
  const Tensor<float> x = randn({32, 64, 16, 16}, 6);
  Parameter<float> g{"g", Tensor<float>({64}, 1.0f), Tensor<float>({64}), false};
  Parameter<float> b{"b", Tensor<float>({64}), Tensor<float>({64}), false};
  Tensor<float> rm({64}), rv({64}, 1.0f);
  for (auto _ : state) {
    Tape<float> tape;
    Var<float> y = ops::batchnorm2d(tape.input(x), tape.parameter(g), tape.parameter(b), rm,
                                    rv, {});
    tape.backward(ops::sum(y));
    benchmark::DoNotOptimize(g.grad.data());
  }
}
BENCHMARK(BM_BatchNormTrain)->Unit(benchmark::kMicrosecond);

}  // namespace
