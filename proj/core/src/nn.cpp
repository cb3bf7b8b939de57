#include "bridgenet/nn.hpp"

#include <cmath>

namespace bridgenet {

template <typename T>
void kaiming_uniform(TensorT<T>& w, int fan_in, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  for (auto& v : w.values()) v = static_cast<T>(rng.uniform(-bound, bound));
}

// ---------------------------------------------------------------------------
// LinearProj
// ---------------------------------------------------------------------------

template <typename T>
LinearProjT<T>::LinearProjT(int c_in, int c_out, Rng& rng)
    : weight(Shape{c_out, c_in}, T(0), true), bias(Shape{c_out}, T(0), true) {
  kaiming_uniform(weight, c_in, rng);
}

template <typename T>
void LinearProjT<T>::collect_params(const std::string& prefix, ParamList<T>& out) const {
  out.push_back({prefix + ".weight", weight});
  out.push_back({prefix + ".bias", bias});
}

// ---------------------------------------------------------------------------
// FfnBlock
// ---------------------------------------------------------------------------

template <typename T>
FfnBlockT<T>::FfnBlockT(int channels, Rng& rng)
    : gamma(Shape{channels}, T(1), true),
      beta(Shape{channels}, T(0), true),
      fc1(channels, kExpansion * channels, rng),
      fc2(kExpansion * channels, channels, rng) {}

template <typename T>
TensorT<T> FfnBlockT<T>::branch(const TensorT<T>& x) const {
  return fc2.forward(gelu(fc1.forward(layer_norm(x, gamma, beta))));
}

template <typename T>
void FfnBlockT<T>::collect_params(const std::string& prefix, ParamList<T>& out) const {
  out.push_back({prefix + ".norm.gamma", gamma});
  out.push_back({prefix + ".norm.beta", beta});
  fc1.collect_params(prefix + ".fc1", out);
  fc2.collect_params(prefix + ".fc2", out);
}

// ---------------------------------------------------------------------------
// Conv1x1
// ---------------------------------------------------------------------------

template <typename T>
Conv1x1T<T>::Conv1x1T(int c_in, int c_out, Rng& rng)
    : weight(Shape{c_out, c_in, 1, 1}, T(0), true), bias(Shape{c_out}, T(0), true) {
  kaiming_uniform(weight, c_in, rng);
}

template <typename T>
void Conv1x1T<T>::collect_params(const std::string& prefix, ParamList<T>& out) const {
  out.push_back({prefix + ".weight", weight});
  out.push_back({prefix + ".bias", bias});
}

// ---------------------------------------------------------------------------
// DwSepDilatedConv
// ---------------------------------------------------------------------------

template <typename T>
DwSepDilatedConvT<T>::DwSepDilatedConvT(int c_in, int c_out, int dil, Rng& rng)
    : dilation(dil),
      dw_weight(Shape{c_in, 1, 3, 3}, T(0), true),
      pw_weight(Shape{c_out, c_in, 1, 1}, T(0), true),
      pw_bias(Shape{c_out}, T(0), true) {
  kaiming_uniform(dw_weight, 9, rng);
  kaiming_uniform(pw_weight, c_in, rng);
}

template <typename T>
TensorT<T> DwSepDilatedConvT<T>::forward(const TensorT<T>& x) const {
  // padding = dilation keeps H and W unchanged for the 3x3 kernel
  TensorT<T> dw = conv2d(x, dw_weight, TensorT<T>(), 1, dilation, x.dim(0), dilation);
  return conv2d(dw, pw_weight, pw_bias);
}

template <typename T>
void DwSepDilatedConvT<T>::collect_params(const std::string& prefix,
                                          ParamList<T>& out) const {
  out.push_back({prefix + ".dw.weight", dw_weight});
  out.push_back({prefix + ".pw.weight", pw_weight});
  out.push_back({prefix + ".pw.bias", pw_bias});
}

// ---------------------------------------------------------------------------
// HdcBlock
// ---------------------------------------------------------------------------

template <typename T>
HdcBlockT<T>::HdcBlockT(int cin, int cout, Rng& rng)
    : c_in(cin),
      c_out(cout),
      conv1(cin, cout, 1, rng),
      conv2(cout, cout, 2, rng),
      conv3(cout, cout, 5, rng) {}

template <typename T>
TensorT<T> HdcBlockT<T>::forward(const TensorT<T>& x) const {
  TensorT<T> y = conv_act(conv1.forward(x));
  y = conv_act(conv2.forward(y));
  y = conv_act(conv3.forward(y));
  if (c_in == c_out) y = add(y, x);
  return y;
}

template <typename T>
void HdcBlockT<T>::collect_params(const std::string& prefix, ParamList<T>& out) const {
  conv1.collect_params(prefix + ".conv1", out);
  conv2.collect_params(prefix + ".conv2", out);
  conv3.collect_params(prefix + ".conv3", out);
}

// ---------------------------------------------------------------------------
// token layout helpers
// ---------------------------------------------------------------------------

template <typename T>
TensorT<T> map_to_tokens(const TensorT<T>& x) {
  if (x.ndim() != 3) throw ShapeError("map_to_tokens: expected [C,H,W]");
  const int c = x.dim(0);
  return permute(reshape(x, Shape{c, x.dim(1) * x.dim(2)}), {1, 0});
}

template <typename T>
TensorT<T> tokens_to_map(const TensorT<T>& x, int h, int w) {
  if (x.ndim() != 2 || x.dim(0) != h * w)
    throw ShapeError("tokens_to_map: token count " + shape_str(x.shape()) +
                     " does not match " + std::to_string(h) + "x" + std::to_string(w));
  return reshape(permute(x, {1, 0}), Shape{x.dim(1), h, w});
}

#define BRIDGENET_INSTANTIATE_NN(T)                    \
  template void kaiming_uniform<T>(TensorT<T>&, int, Rng&); \
  template struct LinearProjT<T>;                      \
  template struct FfnBlockT<T>;                        \
  template struct Conv1x1T<T>;                         \
  template struct DwSepDilatedConvT<T>;                \
  template struct HdcBlockT<T>;                        \
  template TensorT<T> map_to_tokens<T>(const TensorT<T>&); \
  template TensorT<T> tokens_to_map<T>(const TensorT<T>&, int, int);

BRIDGENET_INSTANTIATE_NN(float)
BRIDGENET_INSTANTIATE_NN(double)

#undef BRIDGENET_INSTANTIATE_NN

}  // namespace bridgenet
