// Module-level benchmarks: the three interaction blocks at their in-model
// sizes, plus whole-network forward and one full training step.
#include <benchmark/benchmark.h>

#include "bridgenet/bfe.hpp"
#include "bridgenet/model.hpp"
#include "bridgenet/optim.hpp"
#include "bridgenet/run.hpp"
#include "bridgenet/tfr.hpp"
#include "bridgenet/tpp.hpp"

using namespace bridgenet;

namespace {

TensorF randf(Shape s, Rng& rng) { return rand_uniform<float>(std::move(s), rng, -1.0f, 1.0f); }

// task-pattern propagation over T coarsest-scale maps (stride 16 of 64 -> 4x4)
void BM_tpp_forward(benchmark::State& state) {
  const int tasks = static_cast<int>(state.range(0));
  TppConfig cfg;
  cfg.num_tasks = tasks;
  cfg.channels_p = cfg.channels_a = 32;
  Rng rng(11);
  TppModule m(cfg, rng);
  std::vector<TensorF> p;
  for (int j = 0; j < tasks; ++j) p.push_back(randf(Shape{32, 4, 4}, rng));
  for (auto _ : state) {
    auto out = m.forward(p);
    benchmark::DoNotOptimize(out[0].values().data());
  }
}

// bridge extraction at the finest scale (stride 4 of 64 -> 16x16, kv pool 8)
void BM_bfe_forward(benchmark::State& state) {
  const int tasks = static_cast<int>(state.range(0));
  BfeConfig cfg;
  cfg.query_downsample = 2;
  cfg.kv_downsample = 8;
  cfg.channels_s = cfg.channels_p = cfg.channels_a = 32;
  Rng rng(12);
  BfeModule m(cfg, rng);
  TensorF s = randf(Shape{32, 16, 16}, rng);
  std::vector<TensorF> p;
  for (int j = 0; j < tasks; ++j) p.push_back(randf(Shape{32, 16, 16}, rng));
  for (auto _ : state) {
    TensorF y = m.forward(s, p);
    benchmark::DoNotOptimize(y.values().data());
  }
}

// refinement stack at the finest scale; depth 2/4/6 are the shipped sizes
void BM_tfr_forward(benchmark::State& state) {
  TfrConfig cfg;
  cfg.depth = static_cast<int>(state.range(0));
  cfg.channels_a = cfg.channels_p = 32;
  Rng rng(13);
  TfrStack stack(cfg, rng);
  TensorF bridge = randf(Shape{32, 16, 16}, rng);
  TensorF task = randf(Shape{32, 16, 16}, rng);
  for (auto _ : state) {
    TensorF y = stack.forward(bridge, task);
    benchmark::DoNotOptimize(y.values().data());
  }
}

ModelConfig bench_model_config(int tasks) {
  ModelConfig cfg;  // 64x64 defaults
  std::vector<TaskSpec> pool{segmentation_task(5), depth_task(), normals_task(), edges_task()};
  for (int j = 0; j < tasks; ++j) cfg.tasks.push_back(pool[static_cast<size_t>(j)]);
  return cfg;
}

void BM_model_forward(benchmark::State& state) {
  const ModelConfig cfg = bench_model_config(static_cast<int>(state.range(0)));
  Rng rng(14);
  BridgeNet net(cfg, rng);
  TensorF img = randf(Shape{3, 64, 64}, rng);
  for (auto _ : state) {
    ModelOutputs out = net.forward(img);
    benchmark::DoNotOptimize(out.finals[0].values().data());
  }
}

void BM_model_train_step(benchmark::State& state) {
  RunConfig rc;
  rc.tasks = {"seg", "depth"};
  rc.scene.num_classes = 5;
  const ModelConfig cfg = apply_variant(rc, VariantSpec{});
  Rng rng(15);
  BridgeNet net(cfg, rng);
  ParamList<float> params;
  net.collect_params("net", params);
  Optimizer opt(rc.optim, params);
  const Sample sample = generate_scene(rc.scene, 3);
  const auto targets = targets_for(cfg, sample);
  for (auto _ : state) {
    opt.zero_grad();
    GradTape tape;
    ModelOutputs out = net.forward(sample.image);
    LossBreakdown lb = compute_losses(cfg, out, targets);
    tape.backward(lb.total);
    opt.step(1e-3);
    benchmark::DoNotOptimize(lb.total.item());
  }
}

void BM_scene_render(benchmark::State& state) {
  SceneConfig cfg;
  cfg.image = static_cast<int>(state.range(0));
  uint64_t seed = 0;
  for (auto _ : state) {
    Sample s = generate_scene(cfg, seed++);
    benchmark::DoNotOptimize(s.image.values().data());
  }
}

}  // namespace

BENCHMARK(BM_tpp_forward)->Arg(2)->Arg(4);
BENCHMARK(BM_bfe_forward)->Arg(2)->Arg(4);
BENCHMARK(BM_tfr_forward)->Arg(2)->Arg(4)->Arg(6);
BENCHMARK(BM_model_forward)->Arg(2)->Arg(4)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_model_train_step)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_scene_render)->Arg(64)->Unit(benchmark::kMillisecond);
