#pragma once
// Bridge feature extraction: task-generic features ask, task-specific
// features answer. The generic map is tokenized by a strided depthwise conv,
// every task map is tokenized by average pooling, and one cross-attention
// (queries from the generic side, keys/values from all task tokens jointly)
// produces a bridge map that is folded back onto the generic input through a
// residual. One instance serves one scale; parameters never depend on the
// number of tasks — only the key/value token count grows with it.

#include <string>
#include <utility>
#include <vector>

#include "bridgenet/nn.hpp"
#include "bridgenet/ops.hpp"
#include "bridgenet/tensor.hpp"

namespace bridgenet {

struct BfeConfig {
  int query_downsample = 2;  // d: tokenizer stride on the generic map
  int kv_downsample = 2;     // l: pooling stride on the task maps (this scale)
  int channels_s = 32;       // generic-feature width C_s
  int channels_p = 32;       // task-feature width C_p
  int channels_a = 32;       // attention width C_a (== C_s for the residual)
  int heads = 2;

  void validate() const;
};

template <typename T>
struct BfeModuleT {
  BfeConfig cfg;
  TensorT<T> tok_weight;  // depthwise patch kernel [C_s, 1, d, d], stride d
  LinearProjT<T> q_proj;  // C_s -> C_a
  LinearProjT<T> k_proj;  // C_p -> C_a
  LinearProjT<T> v_proj;  // C_p -> C_a
  FfnBlockT<T> ffn;       // over C_a channels, applied without its residual

  BfeModuleT() = default;
  BfeModuleT(const BfeConfig& c, Rng& rng);

  // [C_s, H, W] -> [(H/d)*(W/d), C_s]
  TensorT<T> tokenize_generic(const TensorT<T>& s) const;
  // T maps [C_p, H, W] -> [T*(H/l)*(W/l), C_p], task blocks in input order
  TensorT<T> tokenize_specific(const std::vector<TensorT<T>>& p) const;
  // raw logits Q·K^T / sqrt(C_a) per head: [h, Nq, Nkv]
  TensorT<T> attention_logits(const TensorT<T>& q_tokens, const TensorT<T>& kv_tokens) const;
  // full pass: bridge map with the same shape as s
  TensorT<T> forward(const TensorT<T>& s, const std::vector<TensorT<T>>& p) const;

  void collect_params(const std::string& prefix, ParamList<T>& out) const;
};

extern template struct BfeModuleT<float>;
extern template struct BfeModuleT<double>;

using BfeModule = BfeModuleT<float>;

}  // namespace bridgenet
