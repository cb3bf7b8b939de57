#pragma once
// Task Pattern Propagation. At the coarsest scale, each task computes raw
// multi-head attention logits from its own features; the per-task maps are
// stacked on the channel axis and squeezed by a 1x1 convolution into a shared
// pattern, softmax-normalized, and applied to every task's values. Each task
// then runs a residual merge + feed-forward block.

#include <utility>
#include <vector>

#include "bridgenet/nn.hpp"

namespace bridgenet {

struct TppConfig {
  int num_tasks = 2;
  int channels_p = 32;  // task feature channels (token width)
  int channels_a = 32;  // attention width; must equal channels_p (residual)
  int heads = 2;

  void validate() const;
};

template <typename T>
struct TppModuleT {
  TppConfig cfg;
  std::vector<LinearProjT<T>> q_proj, k_proj, v_proj;  // per task, C_p -> C_a
  Conv1x1T<T> squeeze;                                 // T*h -> h over N x N maps
  std::vector<LinearProjT<T>> merge;                   // per task, C_a -> C_a
  std::vector<FfnBlockT<T>> ffn;                       // per task, channels C_p

  TppModuleT() = default;
  TppModuleT(const TppConfig& cfg, Rng& rng);

  // raw per-head attention logits A_j [h,N,N] (Q_j K_j^T / sqrt(C_a), no
  // softmax yet) and values V_j [h,N,C_a/h] for task j
  std::pair<TensorT<T>, TensorT<T>> task_attention(const TensorT<T>& p_j, int j) const;

  // squeeze stacked maps, softmax, propagate to every task's values, merge
  // heads; returns per-task token tensors [N, C_a]
  std::vector<TensorT<T>> pattern_propagate(const std::vector<TensorT<T>>& a,
                                            const std::vector<TensorT<T>>& v) const;

  // full block: outputs match input shapes [C_p,H,W]
  std::vector<TensorT<T>> forward(const std::vector<TensorT<T>>& p) const;

  void collect_params(const std::string& prefix, ParamList<T>& out) const;
};

extern template struct TppModuleT<float>;
extern template struct TppModuleT<double>;

using TppModule = TppModuleT<float>;

}  // namespace bridgenet
