// Finite-difference validation of every kernel's backward rule, run in the
// 64-bit shadow mode.

#include <cmath>

#include "bridgenet/gradcheck.hpp"
#include "bridgenet/ops.hpp"
#include "doctest.h"

using namespace bridgenet;

namespace {
TensorD randd(Shape s, Rng& rng, double lo = -1.0, double hi = 1.0) {
  return rand_uniform<double>(std::move(s), rng, lo, hi);
}
}  // namespace

TEST_SUITE("gradcheck") {
  TEST_CASE("identity sum has zero error") {
    // zeros make every perturbed evaluation exactly representable
    auto f = [](std::vector<TensorD>& xs) { return sum_all(xs[0]); };
    CHECK(grad_check(f, {TensorD(Shape{3, 3}, 0.0)}) == 0.0);
    Rng rng(1);
    CHECK(grad_check(f, {randd(Shape{3, 3}, rng)}) < 1e-9);
  }

  TEST_CASE("deliberately wrong backward rule is caught") {
    Rng rng(2);
    // forward x^2 with backward claiming d/dx = x (instead of 2x)
    auto f = [](std::vector<TensorD>& xs) {
      return sum_all(custom_unary<double>(
          xs[0], [](double v) { return v * v; }, [](double v) { return v; }));
    };
    CHECK(grad_check(f, {randd(Shape{4}, rng, 0.5, 1.5)}) > 1e-2);
  }

  TEST_CASE("matmul and bmm") {
    Rng rng(3);
    auto f = [](std::vector<TensorD>& xs) {
      return sum_all(mul(matmul(xs[0], xs[1]), matmul(xs[0], xs[1])));
    };
    CHECK(grad_check(f, {randd(Shape{3, 4}, rng), randd(Shape{4, 2}, rng)}) < kGradCheckTol);
    auto g = [](std::vector<TensorD>& xs) {
      TensorD y = bmm(xs[0], xs[1]);
      return sum_all(mul(y, y));
    };
    CHECK(grad_check(g, {randd(Shape{2, 3, 4}, rng), randd(Shape{2, 4, 3}, rng)}) < kGradCheckTol);
  }

  TEST_CASE("linear with bias") {
    Rng rng(4);
    auto f = [](std::vector<TensorD>& xs) {
      TensorD y = linear(xs[0], xs[1], xs[2]);
      return sum_all(mul(y, y));
    };
    CHECK(grad_check(f, {randd(Shape{5, 3}, rng), randd(Shape{4, 3}, rng),
                         randd(Shape{4}, rng)}) < kGradCheckTol);
  }

  TEST_CASE("elementwise and scalar broadcast") {
    Rng rng(5);
    auto f = [](std::vector<TensorD>& xs) {
      TensorD y = add(mul(xs[0], xs[1]), sub(xs[0], xs[2]));
      return mean_all(mul(y, y));
    };
    CHECK(grad_check(f, {randd(Shape{4, 3}, rng), randd(Shape{4, 3}, rng),
                         randd(Shape{1}, rng)}) < kGradCheckTol);
    auto g = [](std::vector<TensorD>& xs) {
      return sum_all(gelu(scale(xs[0], 1.7)));
    };
    CHECK(grad_check(g, {randd(Shape{17}, rng, -2, 2)}) < kGradCheckTol);
    // keep leaky_relu inputs away from the kink, where fd is undefined
    auto h = [](std::vector<TensorD>& xs) {
      return sum_all(leaky_relu(xs[0], 0.1));
    };
    TensorD away(Shape{6}, std::vector<double>{-1.5, -0.7, -0.2, 0.3, 0.9, 2.0});
    CHECK(grad_check(h, {away}) < kGradCheckTol);
  }

  TEST_CASE("softmax and layer_norm") {
    Rng rng(6);
    auto f = [](std::vector<TensorD>& xs) {
      TensorD s = softmax_lastdim(xs[0]);
      return sum_all(mul(s, xs[1]));
    };
    CHECK(grad_check(f, {randd(Shape{3, 5}, rng, -2, 2), randd(Shape{3, 5}, rng)}) <
          kGradCheckTol);
    auto g = [](std::vector<TensorD>& xs) {
      TensorD y = layer_norm(xs[0], xs[1], xs[2]);
      return sum_all(mul(y, y));
    };
    CHECK(grad_check(g, {randd(Shape{4, 6}, rng, -2, 2), randd(Shape{6}, rng, 0.5, 1.5),
                         randd(Shape{6}, rng)}) < kGradCheckTol);
  }

  TEST_CASE("shape ops") {
    Rng rng(7);
    auto f = [](std::vector<TensorD>& xs) {
      TensorD p = permute(reshape(xs[0], Shape{2, 6}), {1, 0});
      TensorD c = concat<double>({p, slice(p, 1, 0, 1)}, 1);
      return sum_all(mul(c, c));
    };
    CHECK(grad_check(f, {randd(Shape{3, 4}, rng)}) < kGradCheckTol);
  }

  TEST_CASE("conv2d variants") {
    Rng rng(8);
    auto plain = [](std::vector<TensorD>& xs) {
      TensorD y = conv2d(xs[0], xs[1], xs[2], 1, 1, 1, 1);
      return sum_all(mul(y, y));
    };
    CHECK(grad_check(plain, {randd(Shape{2, 5, 5}, rng), randd(Shape{3, 2, 3, 3}, rng),
                             randd(Shape{3}, rng)}) < kGradCheckTol);
    auto strided = [](std::vector<TensorD>& xs) {
      TensorD y = conv2d(xs[0], xs[1], xs[2], 2, 1, 1, 1);
      return sum_all(mul(y, y));
    };
    CHECK(grad_check(strided, {randd(Shape{2, 6, 6}, rng), randd(Shape{2, 2, 3, 3}, rng),
                               randd(Shape{2}, rng)}) < kGradCheckTol);
    auto dilated_depthwise = [](std::vector<TensorD>& xs) {
      TensorD y = conv2d(xs[0], xs[1], xs[2], 1, 2, 3, 2);
      return sum_all(mul(y, y));
    };
    CHECK(grad_check(dilated_depthwise,
                     {randd(Shape{3, 6, 6}, rng), randd(Shape{3, 1, 3, 3}, rng),
                      randd(Shape{3}, rng)}) < kGradCheckTol);
    // dilation 5 with same-padding on a map smaller than the kernel span
    auto tiny = [](std::vector<TensorD>& xs) {
      TensorD y = conv2d(xs[0], xs[1], TensorD(), 1, 5, 2, 5);
      return sum_all(mul(y, y));
    };
    CHECK(grad_check(tiny, {randd(Shape{2, 3, 3}, rng), randd(Shape{2, 1, 3, 3}, rng)}) <
          kGradCheckTol);
  }

  TEST_CASE("pooling and upsampling") {
    Rng rng(9);
    auto f = [](std::vector<TensorD>& xs) {
      TensorD y = avg_pool2d(xs[0], 2);
      return sum_all(mul(y, y));
    };
    CHECK(grad_check(f, {randd(Shape{2, 6, 6}, rng)}) < kGradCheckTol);
    auto g = [](std::vector<TensorD>& xs) {
      TensorD y = upsample_bilinear(xs[0], 3);
      return sum_all(mul(y, y));
    };
    CHECK(grad_check(g, {randd(Shape{2, 3, 4}, rng)}) < kGradCheckTol);
  }

  TEST_CASE("fused losses") {
    Rng rng(10);
    IntTensor labels(Shape{4, 4});
    for (auto& v : labels.values()) v = rng.uniform_int(3);
    labels.values()[0] = -1;  // one ignored pixel
    auto xent = [labels](std::vector<TensorD>& xs) {
      return softmax_xent_2d(xs[0], labels, -1);
    };
    CHECK(grad_check(xent, {randd(Shape{3, 4, 4}, rng, -2, 2)}) < kGradCheckTol);

    TensorD mask = randd(Shape{4, 4}, rng, 0, 1);
    for (auto& v : mask.values()) v = v > 0.3 ? 1.0 : 0.0;
    TensorD target = randd(Shape{2, 4, 4}, rng, -1, 1);
    auto l1 = [target, mask](std::vector<TensorD>& xs) {
      return masked_l1(xs[0], target, mask);
    };
    // keep pred away from pred == target, where |.| is not differentiable
    TensorD pred = randd(Shape{2, 4, 4}, rng, 2, 3);
    CHECK(grad_check(l1, {pred}) < kGradCheckTol);

    TensorD tn = randd(Shape{3, 4, 4}, rng, -1, 1);
    // normalize the target field
    for (int64_t p = 0; p < 16; ++p) {
      double n = 0;
      for (int c = 0; c < 3; ++c) n += tn.values()[static_cast<size_t>(c * 16 + p)] *
                                       tn.values()[static_cast<size_t>(c * 16 + p)];
      n = std::sqrt(n);
      for (int c = 0; c < 3; ++c) tn.values()[static_cast<size_t>(c * 16 + p)] /= n;
    }
    auto cos = [tn, mask](std::vector<TensorD>& xs) { return cosine_loss(xs[0], tn, mask); };
    CHECK(grad_check(cos, {randd(Shape{3, 4, 4}, rng, 0.5, 1.5)}) < kGradCheckTol);

    TensorD edges(Shape{4, 4}, 0.0);
    edges.values()[5] = 1.0;
    edges.values()[6] = 1.0;
    auto bce = [edges, mask](std::vector<TensorD>& xs) {
      return weighted_bce(xs[0], edges, mask);
    };
    CHECK(grad_check(bce, {randd(Shape{4, 4}, rng, -2, 2)}) < kGradCheckTol);
  }

  TEST_CASE("composed conv+softmax+matmul graph") {
    Rng rng(11);
    auto f = [](std::vector<TensorD>& xs) {
      TensorD y = conv2d(xs[0], xs[1], TensorD(), 1, 1, 1, 1);  // [2,4,4]
      TensorD t = reshape(y, Shape{2, 16});
      TensorD s = softmax_lastdim(t);
      TensorD m = matmul(s, permute(t, {1, 0}));  // [2,2]
      return sum_all(mul(m, m));
    };
    CHECK(grad_check(f, {randd(Shape{2, 4, 4}, rng), randd(Shape{2, 2, 3, 3}, rng)}) <
          kGradCheckTol);
  }

  TEST_CASE("coordinate subsampling still covers every tensor") {
    Rng rng(12);
    GradCheckOptions opts;
    opts.max_coords_per_tensor = 5;
    auto f = [](std::vector<TensorD>& xs) { return sum_all(mul(xs[0], xs[0])); };
    GradCheckReport rep = grad_check_report(f, {randd(Shape{10, 10}, rng)}, {"x"}, opts);
    CHECK(rep.per_tensor.size() == 1);
    CHECK(rep.max_rel_err < kGradCheckTol);
  }
}
