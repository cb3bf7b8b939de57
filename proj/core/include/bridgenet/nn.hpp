#pragma once
// Reusable building blocks: linear projections, the LN+MLP feed-forward
// block, 1x1 convolutions, depthwise-separable dilated convolutions, and the
// hybrid-dilated-convolution stack. All parameters are created with
// requires_grad on and Kaiming-uniform/zeros/ones initialization.

#include <string>
#include <utility>
#include <vector>

#include "bridgenet/ops.hpp"
#include "bridgenet/tensor.hpp"

namespace bridgenet {

template <typename T>
struct NamedParam {
  std::string name;
  TensorT<T> tensor;  // alias handle into the owning module
};
template <typename T>
using ParamList = std::vector<NamedParam<T>>;

template <typename T>
int64_t param_count(const ParamList<T>& params) {
  int64_t n = 0;
  for (const auto& p : params) n += p.tensor.numel();
  return n;
}

// U(-sqrt(6/fan_in), sqrt(6/fan_in))
template <typename T>
void kaiming_uniform(TensorT<T>& w, int fan_in, Rng& rng);

// negative slope used by every conv-path activation; keeps all units trainable
inline constexpr double kLeakySlope = 0.1;

template <typename T>
TensorT<T> conv_act(const TensorT<T>& x) {
  return leaky_relu(x, static_cast<T>(kLeakySlope));
}

// ---------------------------------------------------------------------------
// LinearProj: x[N,C_in] -> x[N,C_out]
// ---------------------------------------------------------------------------
template <typename T>
struct LinearProjT {
  TensorT<T> weight;  // [C_out, C_in]
  TensorT<T> bias;    // [C_out]

  LinearProjT() = default;
  LinearProjT(int c_in, int c_out, Rng& rng);
  TensorT<T> forward(const TensorT<T>& x) const { return linear(x, weight, bias); }
  void collect_params(const std::string& prefix, ParamList<T>& out) const;
};

// ---------------------------------------------------------------------------
// FfnBlock: layer_norm -> linear(C, r*C) -> gelu -> linear(r*C, C).
// forward() adds the residual; branch() exposes the un-residual path for
// callers that supply their own skip connection.
// ---------------------------------------------------------------------------
template <typename T>
struct FfnBlockT {
  static constexpr int kExpansion = 2;
  TensorT<T> gamma, beta;  // layer norm affine over C
  LinearProjT<T> fc1, fc2;

  FfnBlockT() = default;
  FfnBlockT(int channels, Rng& rng);
  TensorT<T> branch(const TensorT<T>& x) const;
  TensorT<T> forward(const TensorT<T>& x) const { return add(x, branch(x)); }
  void collect_params(const std::string& prefix, ParamList<T>& out) const;
};

// ---------------------------------------------------------------------------
// Conv1x1: per-pixel linear map on [C,H,W]
// ---------------------------------------------------------------------------
template <typename T>
struct Conv1x1T {
  TensorT<T> weight;  // [C_out, C_in, 1, 1]
  TensorT<T> bias;    // [C_out]

  Conv1x1T() = default;
  Conv1x1T(int c_in, int c_out, Rng& rng);
  TensorT<T> forward(const TensorT<T>& x) const { return conv2d(x, weight, bias); }
  void collect_params(const std::string& prefix, ParamList<T>& out) const;
};

// ---------------------------------------------------------------------------
// DwSepDilatedConv: depthwise 3x3 with dilation, padding = dilation
// (same-size output), then pointwise 1x1 with bias.
// ---------------------------------------------------------------------------
template <typename T>
struct DwSepDilatedConvT {
  int dilation = 1;
  TensorT<T> dw_weight;  // [C_in, 1, 3, 3]
  TensorT<T> pw_weight;  // [C_out, C_in, 1, 1]
  TensorT<T> pw_bias;    // [C_out]

  DwSepDilatedConvT() = default;
  DwSepDilatedConvT(int c_in, int c_out, int dilation, Rng& rng);
  TensorT<T> forward(const TensorT<T>& x) const;
  void collect_params(const std::string& prefix, ParamList<T>& out) const;
};

// ---------------------------------------------------------------------------
// HdcBlock: three depthwise-separable convs with dilations exactly (1,2,5),
// an activation after each, and a residual from the block input when the
// channel counts match.
// ---------------------------------------------------------------------------
template <typename T>
struct HdcBlockT {
  int c_in = 0, c_out = 0;
  DwSepDilatedConvT<T> conv1, conv2, conv3;

  HdcBlockT() = default;
  HdcBlockT(int c_in, int c_out, Rng& rng);
  TensorT<T> forward(const TensorT<T>& x) const;
  void collect_params(const std::string& prefix, ParamList<T>& out) const;
};

// map [C,H,W] -> tokens [H*W, C]
template <typename T>
TensorT<T> map_to_tokens(const TensorT<T>& x);
// tokens [H*W, C] -> map [C,H,W]
template <typename T>
TensorT<T> tokens_to_map(const TensorT<T>& x, int h, int w);

extern template struct LinearProjT<float>;
extern template struct LinearProjT<double>;
extern template struct FfnBlockT<float>;
extern template struct FfnBlockT<double>;
extern template struct Conv1x1T<float>;
extern template struct Conv1x1T<double>;
extern template struct DwSepDilatedConvT<float>;
extern template struct DwSepDilatedConvT<double>;
extern template struct HdcBlockT<float>;
extern template struct HdcBlockT<double>;

using LinearProj = LinearProjT<float>;
using FfnBlock = FfnBlockT<float>;
using Conv1x1 = Conv1x1T<float>;
using DwSepDilatedConv = DwSepDilatedConvT<float>;
using HdcBlock = HdcBlockT<float>;

}  // namespace bridgenet
