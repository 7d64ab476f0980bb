/* Copyright 2026 The Guided SED Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

// Parallel kernels vs. the serial reference on layer shapes taken from the
// default PT/PS networks.

#include <benchmark/benchmark.h>

#include "gsed/kernels.hpp"
#include "gsed/rng.hpp"

namespace {

using gsed::Tensor;
using gsed::kernels::ConvShape;

Tensor random_tensor(int b, int t, int f, int c, std::uint64_t seed) {
  gsed::Rng rng(seed);
  Tensor x(b, t, f, c);
  for (auto& v : x.data) v = static_cast<float>(rng.normal());
  return x;
}

std::vector<float> random_weights(const ConvShape& s, std::uint64_t seed) {
  gsed::Rng rng(seed);
  std::vector<float> w(s.weight_count());
  for (auto& v : w) v = static_cast<float>(rng.normal(0.0, 0.1));
  return w;
}

// args: batch, time, freq, cin, cout, kt, kf
void conv_args(benchmark::internal::Benchmark* b) {
  b->Args({8, 500, 64, 1, 8, 3, 3});
  b->Args({8, 500, 16, 8, 16, 5, 3});
  b->Args({8, 500, 4, 16, 32, 5, 3});
  b->Args({8, 500, 64, 1, 16, 3, 3});
  b->Args({8, 250, 16, 16, 16, 3, 3});
}

template <bool kReference>
void BM_ConvForward(benchmark::State& state) {
  const ConvShape s{static_cast<int>(state.range(5)), static_cast<int>(state.range(6)),
                    static_cast<int>(state.range(3)), static_cast<int>(state.range(4))};
  Tensor x = random_tensor(state.range(0), state.range(1), state.range(2), s.cin, 1);
  auto w = random_weights(s, 2);
  Tensor y;
  for (auto _ : state) {
    if constexpr (kReference) gsed::kernels::reference::conv2d_forward(x, w, s, y);
    else gsed::kernels::conv2d_forward(x, w, s, y);
    benchmark::DoNotOptimize(y.data.data());
  }
  const double macs = static_cast<double>(x.batch) * x.time * x.freq * s.weight_count();
  state.counters["GFLOPS"] = benchmark::Counter(2.0 * macs * state.iterations(),
                                                benchmark::Counter::kIsRate, benchmark::Counter::kIs1000);
}

template <bool kReference>
void BM_ConvBackward(benchmark::State& state) {
  const ConvShape s{static_cast<int>(state.range(5)), static_cast<int>(state.range(6)),
                    static_cast<int>(state.range(3)), static_cast<int>(state.range(4))};
  Tensor x = random_tensor(state.range(0), state.range(1), state.range(2), s.cin, 1);
  Tensor dy = random_tensor(state.range(0), state.range(1), state.range(2), s.cout, 3);
  auto w = random_weights(s, 2);
  std::vector<float> dw(w.size());
  Tensor dx;
  for (auto _ : state) {
    if constexpr (kReference) gsed::kernels::reference::conv2d_backward(x, w, s, dy, &dx, dw);
    else gsed::kernels::conv2d_backward(x, w, s, dy, &dx, dw);
    benchmark::DoNotOptimize(dx.data.data());
  }
  const double macs = 2.0 * x.batch * x.time * x.freq * s.weight_count();
  state.counters["GFLOPS"] = benchmark::Counter(2.0 * macs * state.iterations(),
                                                benchmark::Counter::kIsRate, benchmark::Counter::kIs1000);
}

void BM_BatchNorm(benchmark::State& state) {
  Tensor x = random_tensor(16, 500, 16, 16, 4);
  std::vector<float> gamma(16, 1.0f), beta(16, 0.0f);
  gsed::kernels::BatchNormCache cache;
  Tensor y;
  for (auto _ : state) {
    if (state.range(0) != 0) gsed::kernels::reference::batchnorm_forward_train(x, gamma, beta, 1e-5f, y, cache);
    else gsed::kernels::batchnorm_forward_train(x, gamma, beta, 1e-5f, y, cache);
    benchmark::DoNotOptimize(y.data.data());
  }
}

}  // namespace

BENCHMARK(BM_ConvForward<false>)->Apply(conv_args)->Name("conv_forward/parallel")->Unit(benchmark::kMillisecond);
BENCHMARK(BM_ConvForward<true>)->Apply(conv_args)->Name("conv_forward/reference")->Unit(benchmark::kMillisecond);
BENCHMARK(BM_ConvBackward<false>)->Apply(conv_args)->Name("conv_backward/parallel")->Unit(benchmark::kMillisecond);
BENCHMARK(BM_ConvBackward<true>)->Apply(conv_args)->Name("conv_backward/reference")->Unit(benchmark::kMillisecond);
BENCHMARK(BM_BatchNorm)->Arg(0)->Arg(1)->Name("batchnorm_forward/parallel_vs_reference")->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
