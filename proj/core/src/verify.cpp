#include "bridgenet/verify.hpp"

#include <functional>

#include "bridgenet/bfe.hpp"
#include "bridgenet/gradcheck.hpp"
#include "bridgenet/model.hpp"
#include "bridgenet/nn.hpp"
#include "bridgenet/ops.hpp"
#include "bridgenet/tfr.hpp"
#include "bridgenet/tpp.hpp"

namespace bridgenet {
namespace {

TensorD randd(Shape s, Rng& rng, double lo = -1.0, double hi = 1.0) {
  return rand_uniform<double>(std::move(s), rng, lo, hi);
}

bool dead_bias(const std::string& name) {
  return name.find(".k.bias") != std::string::npos ||
         name.find("squeeze.bias") != std::string::npos;
}

using LossFn = std::function<TensorD(std::vector<TensorD>&)>;

TensorD finish(TensorD loss, bool inject_fault) {
  if (!inject_fault) return loss;
  return custom_unary<double>(
      loss, [](double v) { return v; }, [](double) { return 2.0; });
}

}  // namespace

double verify_tpp(uint64_t seed, bool inject_fault) {
  Rng rng(seed);
  TppConfig cfg;
  cfg.num_tasks = 2;
  cfg.channels_p = cfg.channels_a = 4;
  cfg.heads = 2;
  TppModuleT<double> m(cfg, rng);
  std::vector<TensorD> p{randd(Shape{4, 2, 2}, rng), randd(Shape{4, 2, 2}, rng)};
  TensorD w0 = randd(Shape{4, 2, 2}, rng);
  TensorD w1 = randd(Shape{4, 2, 2}, rng);
  ParamList<double> params;
  m.collect_params("tpp", params);
  std::vector<TensorD> xs{p[0], p[1]};
  for (auto& q : params)
    if (!dead_bias(q.name)) xs.push_back(q.tensor);
  LossFn loss = [&](std::vector<TensorD>& v) {
    std::vector<TensorD> out = m.forward({v[0], v[1]});
    return finish(add(sum_all(mul(out[0], w0)), sum_all(mul(out[1], w1))), inject_fault);
  };
  GradCheckOptions opts;
  opts.max_coords_per_tensor = 16;
  return grad_check(loss, xs, opts);
}

double verify_bfe(uint64_t seed, bool inject_fault) {
  Rng rng(seed);
  BfeConfig cfg;
  cfg.query_downsample = 2;
  cfg.kv_downsample = 2;
  cfg.channels_s = cfg.channels_p = cfg.channels_a = 4;
  cfg.heads = 2;
  BfeModuleT<double> m(cfg, rng);
  TensorD s = randd(Shape{4, 4, 4}, rng);
  std::vector<TensorD> p{randd(Shape{4, 4, 4}, rng), randd(Shape{4, 4, 4}, rng)};
  TensorD w = randd(Shape{4, 4, 4}, rng);
  ParamList<double> params;
  m.collect_params("bfe", params);
  std::vector<TensorD> xs{s, p[0], p[1]};
  for (auto& q : params)
    if (!dead_bias(q.name)) xs.push_back(q.tensor);
  LossFn loss = [&](std::vector<TensorD>& v) {
    return finish(sum_all(mul(m.forward(v[0], {v[1], v[2]}), w)), inject_fault);
  };
  GradCheckOptions opts;
  opts.max_coords_per_tensor = 16;
  return grad_check(loss, xs, opts);
}

double verify_tfr(uint64_t seed, bool inject_fault) {
  Rng rng(seed);
  TfrConfig cfg;
  cfg.depth = 2;
  cfg.channels_a = 3;
  cfg.channels_p = 2;
  TfrStackT<double> stack(cfg, rng);
  TensorD bridge = randd(Shape{3, 4, 4}, rng);
  TensorD task = randd(Shape{2, 4, 4}, rng);
  TensorD w = randd(Shape{2, 4, 4}, rng);
  ParamList<double> params;
  stack.collect_params("tfr", params);
  std::vector<TensorD> xs{bridge, task};
  for (auto& q : params) xs.push_back(q.tensor);
  LossFn loss = [&](std::vector<TensorD>& v) {
    return finish(sum_all(mul(stack.forward(v[0], v[1]), w)), inject_fault);
  };
  GradCheckOptions opts;
  opts.max_coords_per_tensor = 16;
  return grad_check(loss, xs, opts);
}

double verify_hdc(uint64_t seed, bool inject_fault) {
  Rng rng(seed);
  HdcBlockT<double> h(3, 4, rng);
  TensorD x = randd(Shape{3, 6, 6}, rng);
  ParamList<double> params;
  h.collect_params("hdc", params);
  std::vector<TensorD> xs{x};
  for (auto& q : params) xs.push_back(q.tensor);
  LossFn loss = [&](std::vector<TensorD>& v) {
    return finish(mean_all(h.forward(v[0])), inject_fault);
  };
  GradCheckOptions opts;
  opts.max_coords_per_tensor = 24;
  return grad_check(loss, xs, opts);
}

double verify_ffn(uint64_t seed, bool inject_fault) {
  Rng rng(seed);
  FfnBlockT<double> f(6, rng);
  TensorD x = randd(Shape{4, 6}, rng);
  ParamList<double> params;
  f.collect_params("ffn", params);
  std::vector<TensorD> xs{x};
  for (auto& q : params) xs.push_back(q.tensor);
  LossFn loss = [&](std::vector<TensorD>& v) {
    return finish(sum_all(mul(f.forward(v[0]), v[0])), inject_fault);
  };
  return grad_check(loss, xs);
}

double verify_model(uint64_t seed, bool inject_fault) {
  ModelConfig cfg;
  cfg.image_h = cfg.image_w = 16;
  cfg.channels = 8;
  cfg.strides = {2, 4, 8};
  cfg.kv_downsample = {4, 2, 1};
  cfg.tasks = {segmentation_task(5), depth_task()};
  Rng rng(seed);
  BridgeNetT<double> model(cfg, rng);

  Rng drng(seed + 1);
  TensorD img(Shape{3, 16, 16}, 0.0);
  for (auto& v : img.values()) v = drng.uniform() * 2.0 - 1.0;
  std::vector<TaskTargetT<double>> targets;
  {
    TaskTargetT<double> seg;
    seg.mask = TensorD(Shape{16, 16}, 1.0);
    std::vector<int32_t> labels(256);
    for (auto& l : labels) l = static_cast<int32_t>(drng.uniform_int(5));
    seg.labels = IntTensor(Shape{16, 16}, labels);
    targets.push_back(std::move(seg));
    TaskTargetT<double> depth;
    depth.mask = TensorD(Shape{16, 16}, 1.0);
    depth.values = TensorD(Shape{1, 16, 16}, 0.0);
    // keep the regression target away from the fresh model's near-zero
    // outputs so the L1 loss stays off its kink
    for (auto& v : depth.values.values()) v = 0.6 + 0.3 * drng.uniform();
    targets.push_back(std::move(depth));
  }

  ParamList<double> params;
  model.collect_params("net", params);
  std::vector<TensorD> xs;
  for (auto& q : params)
    if (!dead_bias(q.name)) xs.push_back(q.tensor);
  LossFn loss = [&](std::vector<TensorD>&) {
    ModelOutputsT<double> out = model.forward(img);
    return finish(compute_losses(cfg, out, targets).total, inject_fault);
  };
  GradCheckOptions opts;
  opts.max_coords_per_tensor = 2;
  return grad_check(loss, xs, opts);
}

const std::vector<std::pair<std::string, VerifyFn>>& verify_blocks() {
  static const std::vector<std::pair<std::string, VerifyFn>> blocks{
      {"tpp", verify_tpp}, {"bfe", verify_bfe}, {"tfr", verify_tfr},
      {"hdc", verify_hdc}, {"ffn", verify_ffn}, {"model", verify_model}};
  return blocks;
}

}  // namespace bridgenet
