// Kernel benchmarks at the tensor sizes the toy model actually uses
// (channels 32, feature maps 16x16 down to 4x4, images 64x64).
#include <benchmark/benchmark.h>

#include "bridgenet/ops.hpp"

using namespace bridgenet;

namespace {

TensorF randf(Shape s, Rng& rng) { return rand_uniform<float>(std::move(s), rng, -1.0f, 1.0f); }

void BM_conv2d_3x3(benchmark::State& state) {
  const int c = static_cast<int>(state.range(0));
  const int hw = static_cast<int>(state.range(1));
  Rng rng(1);
  TensorF x = randf(Shape{c, hw, hw}, rng);
  TensorF w = randf(Shape{c, c, 3, 3}, rng);
  TensorF b = randf(Shape{c}, rng);
  for (auto _ : state) {
    TensorF y = conv2d(x, w, b, 1, 1, 1, 1);
    benchmark::DoNotOptimize(y.values().data());
  }
  state.SetItemsProcessed(state.iterations() * int64_t(c) * c * hw * hw * 9);
}

void BM_conv2d_depthwise_dilated(benchmark::State& state) {
  const int c = static_cast<int>(state.range(0));
  const int hw = static_cast<int>(state.range(1));
  const int dil = static_cast<int>(state.range(2));
  Rng rng(2);
  TensorF x = randf(Shape{c, hw, hw}, rng);
  TensorF w = randf(Shape{c, 1, 3, 3}, rng);
  TensorF b = randf(Shape{c}, rng);
  for (auto _ : state) {
    TensorF y = conv2d(x, w, b, 1, dil, c, dil);
    benchmark::DoNotOptimize(y.values().data());
  }
  state.SetItemsProcessed(state.iterations() * int64_t(c) * hw * hw * 9);
}

void BM_matmul(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  Rng rng(3);
  TensorF a = randf(Shape{n, n}, rng);
  TensorF b = randf(Shape{n, n}, rng);
  for (auto _ : state) {
    TensorF y = matmul(a, b);
    benchmark::DoNotOptimize(y.values().data());
  }
  state.SetItemsProcessed(state.iterations() * int64_t(n) * n * n);
}

void BM_bmm_attention_shape(benchmark::State& state) {
  // logits for h heads over n tokens of width d, the attention hot loop
  const int h = 2, n = static_cast<int>(state.range(0)), d = 16;
  Rng rng(4);
  TensorF q = randf(Shape{h, n, d}, rng);
  TensorF k = randf(Shape{h, d, n}, rng);
  for (auto _ : state) {
    TensorF y = bmm(q, k);
    benchmark::DoNotOptimize(y.values().data());
  }
  state.SetItemsProcessed(state.iterations() * int64_t(h) * n * n * d);
}

void BM_softmax_rows(benchmark::State& state) {
  const int rows = static_cast<int>(state.range(0));
  const int cols = static_cast<int>(state.range(1));
  Rng rng(5);
  TensorF x = randf(Shape{rows, cols}, rng);
  for (auto _ : state) {
    TensorF y = softmax_lastdim(x);
    benchmark::DoNotOptimize(y.values().data());
  }
  state.SetItemsProcessed(state.iterations() * int64_t(rows) * cols);
}

void BM_layer_norm(benchmark::State& state) {
  const int rows = static_cast<int>(state.range(0));
  const int cols = static_cast<int>(state.range(1));
  Rng rng(6);
  TensorF x = randf(Shape{rows, cols}, rng);
  TensorF g = randf(Shape{cols}, rng);
  TensorF b = randf(Shape{cols}, rng);
  for (auto _ : state) {
    TensorF y = layer_norm(x, g, b);
    benchmark::DoNotOptimize(y.values().data());
  }
  state.SetItemsProcessed(state.iterations() * int64_t(rows) * cols);
}

void BM_upsample_bilinear(benchmark::State& state) {
  const int c = static_cast<int>(state.range(0));
  const int hw = static_cast<int>(state.range(1));
  const int f = static_cast<int>(state.range(2));
  Rng rng(7);
  TensorF x = randf(Shape{c, hw, hw}, rng);
  for (auto _ : state) {
    TensorF y = upsample_bilinear(x, f);
    benchmark::DoNotOptimize(y.values().data());
  }
  state.SetItemsProcessed(state.iterations() * int64_t(c) * hw * f * hw * f);
}

void BM_avg_pool(benchmark::State& state) {
  const int c = static_cast<int>(state.range(0));
  const int hw = static_cast<int>(state.range(1));
  const int f = static_cast<int>(state.range(2));
  Rng rng(8);
  TensorF x = randf(Shape{c, hw, hw}, rng);
  for (auto _ : state) {
    TensorF y = avg_pool2d(x, f);
    benchmark::DoNotOptimize(y.values().data());
  }
  state.SetItemsProcessed(state.iterations() * int64_t(c) * hw * hw);
}

}  // namespace

BENCHMARK(BM_conv2d_3x3)->Args({32, 16})->Args({32, 32})->Args({64, 16});
BENCHMARK(BM_conv2d_depthwise_dilated)->Args({32, 16, 1})->Args({32, 16, 2})->Args({32, 16, 5});
BENCHMARK(BM_matmul)->Arg(64)->Arg(256);
BENCHMARK(BM_bmm_attention_shape)->Arg(64)->Arg(256);
BENCHMARK(BM_softmax_rows)->Args({64, 64})->Args({256, 256});
BENCHMARK(BM_layer_norm)->Args({256, 32});
BENCHMARK(BM_upsample_bilinear)->Args({32, 16, 2})->Args({32, 16, 4});
BENCHMARK(BM_avg_pool)->Args({32, 16, 2})->Args({32, 16, 8});

BENCHMARK_MAIN();
