#pragma once
// Task feature refinement: a cascade of dilated-conv blocks, each consuming
// the (fixed) bridge map concatenated with the evolving task map. The bridge
// is re-injected at every layer; the task map threads through with a skip
// connection per layer. One stack serves one (scale, task) pair.

#include <string>
#include <vector>

#include "bridgenet/nn.hpp"
#include "bridgenet/ops.hpp"
#include "bridgenet/tensor.hpp"

namespace bridgenet {

struct TfrConfig {
  int depth = 2;        // M: 2 = base, 4 = large, 6 = huge
  int channels_a = 32;  // bridge-map width
  int channels_p = 32;  // task-map width (preserved through the stack)

  void validate() const;
};

// one layer: dilated-conv block over [bridge ++ task] channels, plus the
// task-map skip (the conv block itself has no residual here because its
// input width C_a + C_p differs from its output width C_p)
template <typename T>
struct TfrLayerT {
  HdcBlockT<T> hdc;  // (C_a + C_p) -> C_p

  TfrLayerT() = default;
  TfrLayerT(int channels_a, int channels_p, Rng& rng);
  TensorT<T> forward(const TensorT<T>& bridge, const TensorT<T>& x_prev) const;
  void collect_params(const std::string& prefix, ParamList<T>& out) const;
};

template <typename T>
struct TfrStackT {
  TfrConfig cfg;
  std::vector<TfrLayerT<T>> layers;

  TfrStackT() = default;
  TfrStackT(const TfrConfig& c, Rng& rng);
  // x^(0) = task map; x^(k) = layer_k(bridge, x^(k-1)); returns x^(M)
  TensorT<T> forward(const TensorT<T>& bridge, const TensorT<T>& task) const;
  // every intermediate [x^(1) ... x^(M)], for inspection
  std::vector<TensorT<T>> forward_all(const TensorT<T>& bridge, const TensorT<T>& task) const;
  void collect_params(const std::string& prefix, ParamList<T>& out) const;
};

extern template struct TfrLayerT<float>;
extern template struct TfrLayerT<double>;
extern template struct TfrStackT<float>;
extern template struct TfrStackT<double>;

using TfrLayer = TfrLayerT<float>;
using TfrStack = TfrStackT<float>;

}  // namespace bridgenet
