#pragma once
// Differentiable kernels. Each op computes its output eagerly and, when a
// tape is recording and an input requires grad, pushes a backward closure
// that accumulates into the input grad buffers.
//
// Layout conventions:
//   feature maps  [C, H, W]
//   token sets    [N, C]      (one row per token)
//   batched mats  [B, M, K]

#include <functional>

#include "bridgenet/tensor.hpp"

namespace bridgenet {

// -- construction -----------------------------------------------------------
template <typename T>
TensorT<T> full(Shape shape, T value);
template <typename T>
TensorT<T> rand_uniform(Shape shape, Rng& rng, T lo, T hi);

// -- linear algebra ----------------------------------------------------------
// [M,K] x [K,N] -> [M,N]
template <typename T>
TensorT<T> matmul(const TensorT<T>& a, const TensorT<T>& b);
// [B,M,K] x [B,K,N] -> [B,M,N]
template <typename T>
TensorT<T> bmm(const TensorT<T>& a, const TensorT<T>& b);
// rows of x against weight [C_out, C_in], bias [C_out] or undefined
template <typename T>
TensorT<T> linear(const TensorT<T>& x, const TensorT<T>& w, const TensorT<T>& b);

// -- pointwise ---------------------------------------------------------------
template <typename T>
TensorT<T> add(const TensorT<T>& a, const TensorT<T>& b);  // equal shapes, or one scalar
template <typename T>
TensorT<T> sub(const TensorT<T>& a, const TensorT<T>& b);
template <typename T>
TensorT<T> mul(const TensorT<T>& a, const TensorT<T>& b);  // equal shapes, or one scalar
template <typename T>
TensorT<T> scale(const TensorT<T>& x, T c);
template <typename T>
TensorT<T> relu(const TensorT<T>& x);
template <typename T>
TensorT<T> leaky_relu(const TensorT<T>& x, T negative_slope);
template <typename T>
TensorT<T> gelu(const TensorT<T>& x);  // exact erf form

// -- reductions / normalization ----------------------------------------------
template <typename T>
TensorT<T> sum_all(const TensorT<T>& x);
template <typename T>
TensorT<T> mean_all(const TensorT<T>& x);
// softmax over the last axis, max-subtracted for stability
template <typename T>
TensorT<T> softmax_lastdim(const TensorT<T>& x);
// normalizes over the last axis; gamma/beta are 1-D of that length
template <typename T>
TensorT<T> layer_norm(const TensorT<T>& x, const TensorT<T>& gamma,
                      const TensorT<T>& beta, T eps = T(1e-5));

// -- shape -------------------------------------------------------------------
template <typename T>
TensorT<T> reshape(const TensorT<T>& x, Shape shape);
template <typename T>
TensorT<T> permute(const TensorT<T>& x, const std::vector<int>& order);
template <typename T>
TensorT<T> concat(const std::vector<TensorT<T>>& xs, int axis);
template <typename T>
TensorT<T> slice(const TensorT<T>& x, int axis, int start, int length);

// -- spatial (single feature map, [C,H,W]) ------------------------------------
// Cross-correlation. w is [C_out, C_in/groups, kh, kw]; bias [C_out] or
// undefined. Same semantics as the usual deep-learning "conv".
template <typename T>
TensorT<T> conv2d(const TensorT<T>& x, const TensorT<T>& w, const TensorT<T>& bias,
                  int stride = 1, int dilation = 1, int groups = 1, int padding = 0);
// non-overlapping window mean, window == stride
template <typename T>
TensorT<T> avg_pool2d(const TensorT<T>& x, int stride);
// bilinear, align_corners=false, integer factor >= 1
template <typename T>
TensorT<T> upsample_bilinear(const TensorT<T>& x, int factor);

// -- fused losses (scalar outputs, analytic backward) -------------------------
// pixelwise cross-entropy over logits [K,H,W] vs labels [H,W]; labels equal to
// ignore_index are excluded from the mean. Throws ValueError if nothing is left.
template <typename T>
TensorT<T> softmax_xent_2d(const TensorT<T>& logits, const IntTensor& labels,
                           int ignore_index = -1);
// mean |pred - target| over mask > 0 pixels; mask is [H,W], pred/target [C,H,W]
template <typename T>
TensorT<T> masked_l1(const TensorT<T>& pred, const TensorT<T>& target,
                     const TensorT<T>& mask);
// mean (1 - cos(pred, target)) over mask > 0 pixels; pred/target [3,H,W];
// pred is normalized internally, target is assumed unit-length
template <typename T>
TensorT<T> cosine_loss(const TensorT<T>& pred, const TensorT<T>& target,
                       const TensorT<T>& mask);
// class-balanced binary cross-entropy on logits [H,W] vs targets in {0,1}:
// positives weighted by fraction of negatives and vice versa
template <typename T>
TensorT<T> weighted_bce(const TensorT<T>& logits, const TensorT<T>& target,
                        const TensorT<T>& mask);

// -- extension / testing hook --------------------------------------------------
// Elementwise op with caller-supplied forward and derivative. The derivative
// receives the input value. Used by tests to inject deliberately wrong
// backward rules into a block.
template <typename T>
TensorT<T> custom_unary(const TensorT<T>& x, const std::function<T(T)>& fwd,
                        const std::function<T(T)>& dfdx);

// convenience: run backward on the active tape
template <typename T>
void backward(const TensorT<T>& loss);

}  // namespace bridgenet
