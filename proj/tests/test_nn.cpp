#include <cmath>
#include <vector>

#include "bridgenet/gradcheck.hpp"
#include "bridgenet/nn.hpp"
#include "bridgenet/ops.hpp"
#include "bridgenet/tensor.hpp"
#include "doctest.h"

using namespace bridgenet;

namespace {

void fill_zero(TensorF& t) { std::fill(t.values().begin(), t.values().end(), 0.0f); }

// weight <- identity over the leading square block (asserted square here)
template <typename T>
void set_identity(TensorT<T>& w, int n) {
  std::fill(w.values().begin(), w.values().end(), T(0));
  for (int i = 0; i < n; ++i) w.values()[static_cast<size_t>(i * n + i)] = T(1);
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

TEST_SUITE("nn") {
  TEST_CASE("linear proj: identity weight and zero bias pass tokens through") {
    Rng rng(11);
    LinearProj p(5, 5, rng);
    set_identity(p.weight, 5);
    fill_zero(p.bias);
    TensorF x = rand_uniform<float>(Shape{4, 5}, rng, -2, 2);
    CHECK(p.forward(x).values() == x.values());
  }

  TEST_CASE("linear proj: zero weight leaves every row at the bias") {
    Rng rng(12);
    LinearProj p(3, 4, rng);
    fill_zero(p.weight);
    p.bias = TensorF(Shape{4}, std::vector<float>{0.5f, -1.0f, 2.0f, 0.0f});
    TensorF y = p.forward(rand_uniform<float>(Shape{6, 3}, rng, -1, 1));
    for (int i = 0; i < 6; ++i)
      for (int j = 0; j < 4; ++j) CHECK(y.at({i, j}) == p.bias.at({j}));
  }

  TEST_CASE("linear proj: random case matches the matmul-plus-bias oracle") {
    Rng rng(13);
    LinearProj p(7, 3, rng);
    TensorF x = rand_uniform<float>(Shape{5, 7}, rng, -1, 1);
    TensorF bias_rows(Shape{5, 3}, 0.0f);
    for (int i = 0; i < 5; ++i)
      for (int j = 0; j < 3; ++j) bias_rows.values()[static_cast<size_t>(i * 3 + j)] = p.bias.at({j});
    TensorF oracle = add(matmul(x, permute(p.weight, {1, 0})), bias_rows);
    CHECK(max_abs_diff(p.forward(x), oracle) < 1e-6);
  }

  TEST_CASE("ffn: zeroed mlp weights make the block an exact identity") {
    Rng rng(14);
    FfnBlock f(6, rng);
    fill_zero(f.fc1.weight);
    fill_zero(f.fc2.weight);
    TensorF x = rand_uniform<float>(Shape{9, 6}, rng, -3, 3);
    CHECK(f.forward(x).values() == x.values());
  }

  TEST_CASE("ffn: output shape equals input shape and hidden width is doubled") {
    Rng rng(15);
    FfnBlock f(12, rng);
    CHECK(f.fc1.weight.shape() == Shape{24, 12});
    CHECK(f.fc2.weight.shape() == Shape{12, 24});
    TensorF y = f.forward(rand_uniform<float>(Shape{7, 12}, rng, -1, 1));
    CHECK(y.shape() == Shape{7, 12});
  }

  TEST_CASE("ffn: gradient check on input and every parameter") {
    Rng rng(16);
    FfnBlockT<double> f(6, rng);
    TensorD x = rand_uniform<double>(Shape{4, 6}, rng, -1, 1);
    ParamList<double> params;
    f.collect_params("ffn", params);
    std::vector<TensorD> xs{x};
    for (auto& p : params) xs.push_back(p.tensor);
    auto loss = [&](std::vector<TensorD>& v) { return sum_all(mul(f.forward(v[0]), v[0])); };
    CHECK(grad_check(loss, xs) < kGradCheckTol);
  }

  TEST_CASE("conv1x1: identity kernel passes the map through") {
    Rng rng(17);
    Conv1x1 c(3, 3, rng);
    fill_zero(c.weight);
    for (int i = 0; i < 3; ++i) c.weight.values()[static_cast<size_t>(i * 3 + i)] = 1.0f;
    fill_zero(c.bias);
    TensorF x = rand_uniform<float>(Shape{3, 5, 4}, rng, -2, 2);
    CHECK(c.forward(x).values() == x.values());
  }

  TEST_CASE("conv1x1: all-ones single-output kernel sums the channels") {
    Rng rng(18);
    Conv1x1 c(4, 1, rng);
    std::fill(c.weight.values().begin(), c.weight.values().end(), 1.0f);
    fill_zero(c.bias);
    TensorF x = rand_uniform<float>(Shape{4, 3, 3}, rng, -1, 1);
    TensorF y = c.forward(x);
    CHECK(y.shape() == Shape{1, 3, 3});
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) {
        float expect = 0.0f;
        for (int ch = 0; ch < 4; ++ch) expect += x.at({ch, i, j});
        CHECK(y.at({0, i, j}) == doctest::Approx(expect).epsilon(1e-6));
      }
  }

  TEST_CASE("conv1x1: equals the token-space linear map applied per pixel") {
    Rng rng(19);
    Conv1x1 c(5, 2, rng);
    TensorF x = rand_uniform<float>(Shape{5, 4, 6}, rng, -1, 1);
    // same weights viewed as a LinearProj on [H*W, C] tokens
    LinearProj lp;
    lp.weight = reshape(c.weight, Shape{2, 5});
    lp.bias = c.bias;
    TensorF oracle = tokens_to_map(lp.forward(map_to_tokens(x)), 4, 6);
    CHECK(max_abs_diff(c.forward(x), oracle) < 1e-6);
  }

  TEST_CASE("dwsep conv: output keeps the spatial size for each dilation") {
    Rng rng(20);
    TensorF x = rand_uniform<float>(Shape{4, 9, 9}, rng, -1, 1);
    for (int d : {1, 2, 5}) {
      DwSepDilatedConv c(4, 6, d, rng);
      TensorF y = c.forward(x);
      CHECK(y.shape() == Shape{6, 9, 9});
    }
  }

  TEST_CASE("hdc block: dilation sequence is exactly 1, 2, 5") {
    Rng rng(21);
    HdcBlock h(8, 8, rng);
    CHECK(h.conv1.dilation == 1);
    CHECK(h.conv2.dilation == 2);
    CHECK(h.conv3.dilation == 5);
  }

  TEST_CASE("hdc block: zero kernels with matching channels reduce to the identity") {
    Rng rng(22);
    HdcBlock h(6, 6, rng);
    for (auto* c : {&h.conv1, &h.conv2, &h.conv3}) {
      fill_zero(c->dw_weight);
      fill_zero(c->pw_weight);
      fill_zero(c->pw_bias);
    }
    TensorF x = rand_uniform<float>(Shape{6, 12, 12}, rng, -2, 2);
    CHECK(h.forward(x).values() == x.values());
  }

  TEST_CASE("hdc block: spatial size preserved at 16x16 and 32x32") {
    Rng rng(23);
    HdcBlock same(8, 8, rng);
    HdcBlock wider(8, 12, rng);
    for (int s : {16, 32}) {
      TensorF x = rand_uniform<float>(Shape{8, s, s}, rng, -1, 1);
      CHECK(same.forward(x).shape() == Shape{8, s, s});
      CHECK(wider.forward(x).shape() == Shape{12, s, s});
    }
  }

  TEST_CASE("hdc block: gradient check on input and parameters") {
    Rng rng(24);
    HdcBlockT<double> h(3, 4, rng);
    TensorD x = rand_uniform<double>(Shape{3, 6, 6}, rng, -1, 1);
    ParamList<double> params;
    h.collect_params("hdc", params);
    std::vector<TensorD> xs{x};
    for (auto& p : params) xs.push_back(p.tensor);
    auto loss = [&](std::vector<TensorD>& v) { return mean_all(h.forward(v[0])); };
    GradCheckOptions opts;
    opts.max_coords_per_tensor = 24;
    CHECK(grad_check(loss, xs, opts) < kGradCheckTol);
  }

  TEST_CASE("kaiming init: weights stay inside the fan-in bound, biases at zero") {
    Rng rng(25);
    LinearProj p(32, 16, rng);
    const float lin_bound = std::sqrt(6.0f / 32.0f);
    for (float w : p.weight.values()) CHECK(std::abs(w) <= lin_bound);
    for (float b : p.bias.values()) CHECK(b == 0.0f);

    DwSepDilatedConv c(8, 8, 2, rng);
    const float dw_bound = std::sqrt(6.0f / 9.0f);   // depthwise fan-in 1*3*3
    const float pw_bound = std::sqrt(6.0f / 8.0f);   // pointwise fan-in C_in
    for (float w : c.dw_weight.values()) CHECK(std::abs(w) <= dw_bound);
    for (float w : c.pw_weight.values()) CHECK(std::abs(w) <= pw_bound);
  }

  TEST_CASE("token helpers: map/token round trip is a bitwise identity") {
    Rng rng(26);
    TensorF x = rand_uniform<float>(Shape{5, 3, 7}, rng, -1, 1);
    TensorF tokens = map_to_tokens(x);
    CHECK(tokens.shape() == Shape{21, 5});
    CHECK(tokens_to_map(tokens, 3, 7).values() == x.values());
  }

  TEST_CASE("parameter registry: names prefixed and counts add up") {
    Rng rng(27);
    HdcBlock h(4, 6, rng);
    ParamList<float> params;
    h.collect_params("block", params);
    int64_t expect = 0;
    // three dwsep convs: dw [C,1,3,3] + pw [C_out,C,1,1] + pw bias
    expect += 4 * 9 + 6 * 4 + 6;   // 4 -> 6
    expect += 6 * 9 + 6 * 6 + 6;   // 6 -> 6
    expect += 6 * 9 + 6 * 6 + 6;   // 6 -> 6
    CHECK(param_count(params) == expect);
    for (const auto& p : params) CHECK(p.name.rfind("block.", 0) == 0);
  }
}
