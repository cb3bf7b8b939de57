#include <cmath>
#include <vector>

#include "bridgenet/gradcheck.hpp"
#include "bridgenet/ops.hpp"
#include "bridgenet/tensor.hpp"
#include "bridgenet/tpp.hpp"
#include "doctest.h"

using namespace bridgenet;

namespace {

TppConfig toy_config(int tasks, int channels = 8, int heads = 2) {
  TppConfig cfg;
  cfg.num_tasks = tasks;
  cfg.channels_p = channels;
  cfg.channels_a = channels;
  cfg.heads = heads;
  return cfg;
}

void fill_zero(TensorF& t) { std::fill(t.values().begin(), t.values().end(), 0.0f); }

// square identity over the leading two axes of a [C,C] or [C,C,1,1] weight
void set_identity(TensorF& w, int n) {
  std::fill(w.values().begin(), w.values().end(), 0.0f);
  for (int i = 0; i < n; ++i) w.values()[static_cast<size_t>(i * n + i)] = 1.0f;
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

TEST_SUITE("tpp") {
  TEST_CASE("config: rejects zero tasks, odd head split, and width mismatch") {
    CHECK_THROWS_AS(toy_config(0).validate(), ConfigError);
    CHECK_THROWS_AS(toy_config(2, 9, 2).validate(), ConfigError);
    TppConfig uneven = toy_config(2);
    uneven.channels_a = 16;  // residual add needs matching widths
    CHECK_THROWS_AS(uneven.validate(), ConfigError);
    CHECK_NOTHROW(toy_config(3).validate());
  }

  TEST_CASE("task attention: tied query and key projections give symmetric maps") {
    Rng rng(31);
    TppModule m(toy_config(1), rng);
    m.k_proj[0] = m.q_proj[0];  // share the projection
    TensorF p = rand_uniform<float>(Shape{8, 3, 3}, rng, -1, 1);
    TensorF a = m.task_attention(p, 0).first;
    CHECK(a.shape() == Shape{2, 9, 9});
    for (int b = 0; b < 2; ++b)
      for (int i = 0; i < 9; ++i)
        for (int j = 0; j < 9; ++j) CHECK(a.at({b, i, j}) == a.at({b, j, i}));
  }

  TEST_CASE("task attention: zero query projection produces all-zero logits") {
    Rng rng(32);
    TppModule m(toy_config(1), rng);
    fill_zero(m.q_proj[0].weight);
    fill_zero(m.q_proj[0].bias);
    TensorF p = rand_uniform<float>(Shape{8, 2, 2}, rng, -1, 1);
    TensorF a = m.task_attention(p, 0).first;
    for (float v : a.values()) CHECK(v == 0.0f);
  }

  TEST_CASE("task attention: doubling the query projection doubles the logits") {
    Rng rng(33);
    TppModule m(toy_config(2), rng);
    TensorF p = rand_uniform<float>(Shape{8, 3, 3}, rng, -1, 1);
    TensorF a1 = m.task_attention(p, 1).first;
    for (float& w : m.q_proj[1].weight.values()) w *= 2.0f;
    for (float& b : m.q_proj[1].bias.values()) b *= 2.0f;
    TensorF a2 = m.task_attention(p, 1).first;
    for (int64_t i = 0; i < a1.numel(); ++i)
      CHECK(a2.values()[static_cast<size_t>(i)] == 2.0f * a1.values()[static_cast<size_t>(i)]);
  }

  TEST_CASE("task attention: rejects an out-of-range task index") {
    Rng rng(34);
    TppModule m(toy_config(2), rng);
    TensorF p = rand_uniform<float>(Shape{8, 2, 2}, rng, -1, 1);
    CHECK_THROWS_AS(m.task_attention(p, 2), ConfigError);
  }

  TEST_CASE("pattern propagate: identity squeeze with one task is plain self-attention") {
    Rng rng(35);
    TppModule m(toy_config(1), rng);
    set_identity(m.squeeze.weight, 2);  // T*h = h = 2 channels
    fill_zero(m.squeeze.bias);
    TensorF p = rand_uniform<float>(Shape{8, 3, 3}, rng, -1, 1);
    auto [a, v] = m.task_attention(p, 0);
    TensorF got = m.pattern_propagate({a}, {v})[0];
    // oracle: softmax over the raw logits, heads applied to values, merged
    TensorF sm = softmax_lastdim(a);
    TensorF xh = bmm(sm, v);                                   // [h, N, C/h]
    TensorF tokens = reshape(permute(xh, {1, 0, 2}), Shape{9, 8});
    TensorF oracle = m.merge[0].forward(tokens);
    CHECK(max_abs_diff(got, oracle) == 0.0);
  }

  TEST_CASE("pattern propagate: attention rows sum to one through the real path") {
    // ones-values + identity merge turn each output entry into a softmax row sum
    Rng rng(36);
    TppModule m(toy_config(2), rng);
    for (int j = 0; j < 2; ++j) {
      set_identity(m.merge[static_cast<size_t>(j)].weight, 8);
      fill_zero(m.merge[static_cast<size_t>(j)].bias);
    }
    const int n = 9;
    std::vector<TensorF> a, v;
    for (int j = 0; j < 2; ++j) {
      a.push_back(rand_uniform<float>(Shape{2, n, n}, rng, -4, 4));
      v.push_back(TensorF(Shape{2, n, 4}, 1.0f));
    }
    for (const TensorF& x : m.pattern_propagate(a, v))
      for (float e : x.values()) CHECK(e == doctest::Approx(1.0f).epsilon(1e-6));
  }

  TEST_CASE("pattern propagate: constant logit shift leaves the output unchanged") {
    Rng rng(37);
    TppModule m(toy_config(2), rng);
    TensorF p0 = rand_uniform<float>(Shape{8, 3, 3}, rng, -1, 1);
    TensorF p1 = rand_uniform<float>(Shape{8, 3, 3}, rng, -1, 1);
    auto [a0, v0] = m.task_attention(p0, 0);
    auto [a1, v1] = m.task_attention(p1, 1);
    std::vector<TensorF> before = m.pattern_propagate({a0, a1}, {v0, v1});
    // shifting the squeeze bias adds the same constant to every pooled logit
    for (float& b : m.squeeze.bias.values()) b += 3.7f;
    std::vector<TensorF> after = m.pattern_propagate({a0, a1}, {v0, v1});
    for (size_t j = 0; j < before.size(); ++j)
      CHECK(max_abs_diff(before[j], after[j]) < 1e-5);
  }

  TEST_CASE("forward: zeroed merge and ffn output layers reduce to the identity") {
    Rng rng(38);
    TppModule m(toy_config(2), rng);
    for (int j = 0; j < 2; ++j) {
      fill_zero(m.merge[static_cast<size_t>(j)].weight);
      fill_zero(m.merge[static_cast<size_t>(j)].bias);
      fill_zero(m.ffn[static_cast<size_t>(j)].fc2.weight);
      fill_zero(m.ffn[static_cast<size_t>(j)].fc2.bias);
    }
    std::vector<TensorF> p{rand_uniform<float>(Shape{8, 4, 4}, rng, -1, 1),
                           rand_uniform<float>(Shape{8, 4, 4}, rng, -1, 1)};
    std::vector<TensorF> out = m.forward(p);
    REQUIRE(out.size() == 2);
    CHECK(out[0].values() == p[0].values());
    CHECK(out[1].values() == p[1].values());
  }

  TEST_CASE("forward: two 32-channel 8x8 inputs give two 32-channel 8x8 outputs") {
    Rng rng(39);
    TppModule m(toy_config(2, 32), rng);
    std::vector<TensorF> p{rand_uniform<float>(Shape{32, 8, 8}, rng, -1, 1),
                           rand_uniform<float>(Shape{32, 8, 8}, rng, -1, 1)};
    std::vector<TensorF> out = m.forward(p);
    REQUIRE(out.size() == 2);
    for (const TensorF& o : out) CHECK(o.shape() == Shape{32, 8, 8});
  }

  TEST_CASE("forward: shapes preserved for one to four tasks") {
    Rng rng(40);
    for (int t = 1; t <= 4; ++t) {
      TppModule m(toy_config(t), rng);
      std::vector<TensorF> p;
      for (int j = 0; j < t; ++j) p.push_back(rand_uniform<float>(Shape{8, 4, 4}, rng, -1, 1));
      std::vector<TensorF> out = m.forward(p);
      REQUIRE(static_cast<int>(out.size()) == t);
      for (const TensorF& o : out) CHECK(o.shape() == Shape{8, 4, 4});
    }
  }

  TEST_CASE("forward: rejects an empty task list and mismatched shapes") {
    Rng rng(41);
    TppModule m(toy_config(2), rng);
    CHECK_THROWS_AS(m.forward({}), ConfigError);
    std::vector<TensorF> bad{rand_uniform<float>(Shape{8, 4, 4}, rng, -1, 1),
                             rand_uniform<float>(Shape{8, 2, 2}, rng, -1, 1)};
    CHECK_THROWS_AS(m.forward(bad), ShapeError);
  }

  TEST_CASE("forward: perturbing one task's input moves the other task's output") {
    Rng rng(42);
    TppModule m(toy_config(2), rng);
    std::vector<TensorF> p{rand_uniform<float>(Shape{8, 4, 4}, rng, -1, 1),
                           rand_uniform<float>(Shape{8, 4, 4}, rng, -1, 1)};
    TensorF base = m.forward(p)[0];
    p[1] = rand_uniform<float>(Shape{8, 4, 4}, rng, -1, 1);
    TensorF moved = m.forward(p)[0];
    CHECK(max_abs_diff(base, moved) > 0.0);
  }

  TEST_CASE("parameter count is affine in the number of tasks") {
    Rng rng(43);
    std::vector<int64_t> counts;
    for (int t = 1; t <= 4; ++t) {
      TppModule m(toy_config(t), rng);
      ParamList<float> params;
      m.collect_params("tpp", params);
      counts.push_back(param_count(params));
    }
    CHECK(counts[1] - counts[0] == counts[2] - counts[1]);
    CHECK(counts[2] - counts[1] == counts[3] - counts[2]);
  }

  TEST_CASE("forward: end-to-end gradient check stays below tolerance") {
    Rng rng(44);
    TppModuleT<double> m(toy_config(2, 4), rng);
    std::vector<TensorD> p{rand_uniform<double>(Shape{4, 2, 2}, rng, -1, 1),
                           rand_uniform<double>(Shape{4, 2, 2}, rng, -1, 1)};
    TensorD w0 = rand_uniform<double>(Shape{4, 2, 2}, rng, -1, 1);
    TensorD w1 = rand_uniform<double>(Shape{4, 2, 2}, rng, -1, 1);
    ParamList<double> params;
    m.collect_params("tpp", params);
    // Key biases and the squeeze bias shift every logit of a softmax row by
    // the same amount, so their true gradient is identically zero. The
    // relative-error ratio is meaningless at an exact zero (the oracle is
    // pure cancellation noise there); they get an absolute check below.
    std::vector<TensorD> xs{p[0], p[1]};
    for (auto& q : params)
      if (q.name.find(".k.bias") == std::string::npos &&
          q.name.find("squeeze.bias") == std::string::npos)
        xs.push_back(q.tensor);
    auto loss = [&](std::vector<TensorD>& v) {
      std::vector<TensorD> out = m.forward({v[0], v[1]});
      return add(sum_all(mul(out[0], w0)), sum_all(mul(out[1], w1)));
    };
    GradCheckOptions opts;
    opts.max_coords_per_tensor = 16;
    CHECK(grad_check(loss, xs, opts) < kGradCheckTol);
  }

  TEST_CASE("backward: key and squeeze biases receive exactly no gradient") {
    // row-uniform logit shifts are invisible to the row softmax, and these
    // biases can only produce row-uniform shifts — the backward pass must
    // agree to rounding error
    Rng rng(45);
    TppModuleT<double> m(toy_config(2, 4), rng);
    std::vector<TensorD> p{rand_uniform<double>(Shape{4, 2, 2}, rng, -1, 1),
                           rand_uniform<double>(Shape{4, 2, 2}, rng, -1, 1)};
    ParamList<double> params;
    m.collect_params("tpp", params);
    for (auto& q : params) {
      q.tensor.set_requires_grad(true);
      q.tensor.zero_grad();
    }
    GradTapeD tape;
    std::vector<TensorD> out = m.forward(p);
    tape.backward(sum_all(add(out[0], out[1])));
    for (auto& q : params) {
      if (q.name.find(".k.bias") == std::string::npos &&
          q.name.find("squeeze.bias") == std::string::npos)
        continue;
      for (double g : q.tensor.grad()) CHECK(std::abs(g) < 1e-12);
    }
  }
}
