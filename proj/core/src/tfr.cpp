#include "bridgenet/tfr.hpp"

namespace bridgenet {

void TfrConfig::validate() const {
  if (depth < 1) throw ConfigError("tfr: depth must be at least 1");
  if (channels_a < 1 || channels_p < 1) throw ConfigError("tfr: channel counts must be positive");
}

template <typename T>
TfrLayerT<T>::TfrLayerT(int channels_a, int channels_p, Rng& rng)
    : hdc(channels_a + channels_p, channels_p, rng) {}

template <typename T>
TensorT<T> TfrLayerT<T>::forward(const TensorT<T>& bridge, const TensorT<T>& x_prev) const {
  if (bridge.ndim() != 3 || x_prev.ndim() != 3 || bridge.dim(1) != x_prev.dim(1) ||
      bridge.dim(2) != x_prev.dim(2))
    throw ShapeError("tfr: bridge " + shape_str(bridge.shape()) + " and task map " +
                     shape_str(x_prev.shape()) + " must align spatially");
  TensorT<T> fused = hdc.forward(concat(std::vector<TensorT<T>>{bridge, x_prev}, 0));
  return add(fused, x_prev);
}

template <typename T>
TfrStackT<T>::TfrStackT(const TfrConfig& c, Rng& rng) : cfg(c) {
  cfg.validate();
  for (int k = 0; k < cfg.depth; ++k) layers.emplace_back(cfg.channels_a, cfg.channels_p, rng);
}

template <typename T>
TensorT<T> TfrStackT<T>::forward(const TensorT<T>& bridge, const TensorT<T>& task) const {
  TensorT<T> x = task;
  for (const auto& layer : layers) x = layer.forward(bridge, x);
  return x;
}

template <typename T>
std::vector<TensorT<T>> TfrStackT<T>::forward_all(const TensorT<T>& bridge,
                                                  const TensorT<T>& task) const {
  std::vector<TensorT<T>> steps;
  steps.reserve(layers.size());
  TensorT<T> x = task;
  for (const auto& layer : layers) {
    x = layer.forward(bridge, x);
    steps.push_back(x);
  }
  return steps;
}

template <typename T>
void TfrLayerT<T>::collect_params(const std::string& prefix, ParamList<T>& out) const {
  hdc.collect_params(prefix + ".hdc", out);
}

template <typename T>
void TfrStackT<T>::collect_params(const std::string& prefix, ParamList<T>& out) const {
  for (size_t k = 0; k < layers.size(); ++k)
    layers[k].collect_params(prefix + ".layer" + std::to_string(k), out);
}

template struct TfrLayerT<float>;
template struct TfrLayerT<double>;
template struct TfrStackT<float>;
template struct TfrStackT<double>;

}  // namespace bridgenet
