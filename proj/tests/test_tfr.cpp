#include <cmath>
#include <vector>

#include "bridgenet/gradcheck.hpp"
#include "bridgenet/ops.hpp"
#include "bridgenet/tensor.hpp"
#include "bridgenet/tfr.hpp"
#include "doctest.h"

using namespace bridgenet;

namespace {

TfrConfig toy_config(int depth, int channels_a = 6, int channels_p = 4) {
  TfrConfig cfg;
  cfg.depth = depth;
  cfg.channels_a = channels_a;
  cfg.channels_p = channels_p;
  return cfg;
}

void zero_layer(TfrLayer& layer) {
  for (auto* c : {&layer.hdc.conv1, &layer.hdc.conv2, &layer.hdc.conv3}) {
    std::fill(c->dw_weight.values().begin(), c->dw_weight.values().end(), 0.0f);
    std::fill(c->pw_weight.values().begin(), c->pw_weight.values().end(), 0.0f);
    std::fill(c->pw_bias.values().begin(), c->pw_bias.values().end(), 0.0f);
  }
}

double max_abs_diff(const TensorF& a, const TensorF& b) {
  REQUIRE(a.shape() == b.shape());
  double m = 0.0;
  for (int64_t i = 0; i < a.numel(); ++i)
    m = std::max(m, std::abs(static_cast<double>(a.values()[static_cast<size_t>(i)]) -
                             static_cast<double>(b.values()[static_cast<size_t>(i)])));
  return m;
}

}  // namespace

TEST_SUITE("tfr") {
  TEST_CASE("config: zero depth and empty widths are rejected") {
    CHECK_THROWS_AS(toy_config(0).validate(), ConfigError);
    CHECK_THROWS_AS(toy_config(2, 0, 4).validate(), ConfigError);
    for (int m : {2, 4, 6}) CHECK_NOTHROW(toy_config(m).validate());
  }

  TEST_CASE("layer: zero kernels return the task map unchanged") {
    Rng rng(71);
    TfrLayer layer(6, 4, rng);
    zero_layer(layer);
    TensorF bridge = rand_uniform<float>(Shape{6, 5, 5}, rng, -1, 1);
    TensorF task = rand_uniform<float>(Shape{4, 5, 5}, rng, -1, 1);
    CHECK(layer.forward(bridge, task).values() == task.values());
  }

  TEST_CASE("layer: output keeps the task width and the spatial size") {
    Rng rng(72);
    TfrLayer layer(6, 4, rng);
    for (int s : {5, 8, 12}) {
      TensorF bridge = rand_uniform<float>(Shape{6, s, s}, rng, -1, 1);
      TensorF task = rand_uniform<float>(Shape{4, s, s}, rng, -1, 1);
      CHECK(layer.forward(bridge, task).shape() == Shape{4, s, s});
    }
  }

  TEST_CASE("layer: spatially misaligned inputs are rejected") {
    Rng rng(73);
    TfrLayer layer(6, 4, rng);
    TensorF bridge = rand_uniform<float>(Shape{6, 5, 5}, rng, -1, 1);
    TensorF task = rand_uniform<float>(Shape{4, 6, 6}, rng, -1, 1);
    CHECK_THROWS_AS(layer.forward(bridge, task), ShapeError);
  }

  TEST_CASE("layer: gradient reaches both the bridge and the task input") {
    Rng rng(74);
    TfrLayerT<double> layer(3, 2, rng);
    TensorD bridge = rand_uniform<double>(Shape{3, 4, 4}, rng, -1, 1);
    TensorD task = rand_uniform<double>(Shape{2, 4, 4}, rng, -1, 1);
    bridge.set_requires_grad(true);
    task.set_requires_grad(true);
    bridge.zero_grad();
    task.zero_grad();
    GradTapeD tape;
    tape.backward(sum_all(layer.forward(bridge, task)));
    double bsum = 0.0, tsum = 0.0;
    for (double g : bridge.grad()) bsum += std::abs(g);
    for (double g : task.grad()) tsum += std::abs(g);
    CHECK(bsum > 0.0);
    CHECK(tsum > 0.0);
  }

  TEST_CASE("stack: depth one equals a single layer call") {
    Rng rng(75);
    TfrStack stack(toy_config(1), rng);
    TensorF bridge = rand_uniform<float>(Shape{6, 4, 4}, rng, -1, 1);
    TensorF task = rand_uniform<float>(Shape{4, 4, 4}, rng, -1, 1);
    CHECK(stack.forward(bridge, task).values() ==
          stack.layers[0].forward(bridge, task).values());
  }

  TEST_CASE("stack: depth two equals the manual two-step composition bitwise") {
    Rng rng(76);
    TfrStack stack(toy_config(2), rng);
    TensorF bridge = rand_uniform<float>(Shape{6, 4, 4}, rng, -1, 1);
    TensorF task = rand_uniform<float>(Shape{4, 4, 4}, rng, -1, 1);
    TensorF manual = stack.layers[1].forward(bridge, stack.layers[0].forward(bridge, task));
    CHECK(stack.forward(bridge, task).values() == manual.values());
  }

  TEST_CASE("stack: parameter count is exactly affine in depth") {
    Rng rng(77);
    std::vector<int64_t> counts;
    for (int depth : {1, 2, 3, 4}) {
      TfrStack stack(toy_config(depth), rng);
      ParamList<float> params;
      stack.collect_params("tfr", params);
      counts.push_back(param_count(params));
    }
    CHECK(counts[1] - counts[0] == counts[2] - counts[1]);
    CHECK(counts[2] - counts[1] == counts[3] - counts[2]);
  }

  TEST_CASE("stack: the bridge is re-injected at every layer") {
    Rng rng(78);
    TfrStack stack(toy_config(3), rng);
    TensorF bridge = rand_uniform<float>(Shape{6, 4, 4}, rng, -1, 1);
    TensorF task = rand_uniform<float>(Shape{4, 4, 4}, rng, -1, 1);
    std::vector<TensorF> with = stack.forward_all(bridge, task);
    std::vector<TensorF> without = stack.forward_all(TensorF(Shape{6, 4, 4}, 0.0f), task);
    REQUIRE(with.size() == 3);
    for (size_t k = 0; k < with.size(); ++k)
      CHECK(max_abs_diff(with[k], without[k]) > 0.0);
  }

  TEST_CASE("stack: end-to-end gradient check at depth two stays below tolerance") {
    Rng rng(79);
    TfrStackT<double> stack(toy_config(2, 3, 2), rng);
    TensorD bridge = rand_uniform<double>(Shape{3, 4, 4}, rng, -1, 1);
    TensorD task = rand_uniform<double>(Shape{2, 4, 4}, rng, -1, 1);
    TensorD w = rand_uniform<double>(Shape{2, 4, 4}, rng, -1, 1);
    ParamList<double> params;
    stack.collect_params("tfr", params);
    std::vector<TensorD> xs{bridge, task};
    for (auto& q : params) xs.push_back(q.tensor);
    auto loss = [&](std::vector<TensorD>& v) {
      return sum_all(mul(stack.forward(v[0], v[1]), w));
    };
    GradCheckOptions opts;
    opts.max_coords_per_tensor = 16;
    CHECK(grad_check(loss, xs, opts) < kGradCheckTol);
  }
}
