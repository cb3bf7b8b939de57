#include "bridgenet/bfe.hpp"

#include <cmath>

namespace bridgenet {

void BfeConfig::validate() const {
  if (query_downsample < 1 || kv_downsample < 1)
    throw ConfigError("bfe: downsample factors must be positive");
  if (heads < 1 || channels_a % heads != 0)
    throw ConfigError("bfe: attention width " + std::to_string(channels_a) +
                      " not divisible by " + std::to_string(heads) + " heads");
  if (channels_a != channels_s)
    throw ConfigError("bfe: attention width must equal generic width for the residual");
}

template <typename T>
BfeModuleT<T>::BfeModuleT(const BfeConfig& c, Rng& rng) : cfg(c) {
  cfg.validate();
  const int d = cfg.query_downsample;
  tok_weight = TensorT<T>(Shape{cfg.channels_s, 1, d, d}, T(0));
  kaiming_uniform(tok_weight, d * d, rng);
  tok_weight.set_requires_grad(true);
  q_proj = LinearProjT<T>(cfg.channels_s, cfg.channels_a, rng);
  k_proj = LinearProjT<T>(cfg.channels_p, cfg.channels_a, rng);
  v_proj = LinearProjT<T>(cfg.channels_p, cfg.channels_a, rng);
  ffn = FfnBlockT<T>(cfg.channels_a, rng);
}

template <typename T>
TensorT<T> BfeModuleT<T>::tokenize_generic(const TensorT<T>& s) const {
  const int d = cfg.query_downsample;
  if (s.ndim() != 3 || s.dim(0) != cfg.channels_s)
    throw ShapeError("bfe: generic map must be [" + std::to_string(cfg.channels_s) +
                     ", H, W], got " + shape_str(s.shape()));
  if (s.dim(1) % d != 0 || s.dim(2) % d != 0)
    throw ConfigError("bfe: spatial size " + shape_str(s.shape()) +
                      " not divisible by query downsample " + std::to_string(d));
  TensorT<T> patches = conv2d(s, tok_weight, TensorT<T>(), d, 1, cfg.channels_s, 0);
  return map_to_tokens(patches);
}

template <typename T>
TensorT<T> BfeModuleT<T>::tokenize_specific(const std::vector<TensorT<T>>& p) const {
  if (p.empty()) throw ConfigError("bfe: empty task list");
  const int l = cfg.kv_downsample;
  std::vector<TensorT<T>> blocks;
  blocks.reserve(p.size());
  for (const auto& pj : p) {
    if (pj.shape() != p[0].shape())
      throw ShapeError("bfe: task maps must share one shape, got " + shape_str(pj.shape()) +
                       " vs " + shape_str(p[0].shape()));
    if (pj.ndim() != 3 || pj.dim(0) != cfg.channels_p)
      throw ShapeError("bfe: task map must be [" + std::to_string(cfg.channels_p) +
                       ", H, W], got " + shape_str(pj.shape()));
    if (pj.dim(1) % l != 0 || pj.dim(2) % l != 0)
      throw ConfigError("bfe: spatial size " + shape_str(pj.shape()) +
                        " not divisible by key/value downsample " + std::to_string(l));
    blocks.push_back(map_to_tokens(avg_pool2d(pj, l)));
  }
  return concat(blocks, 0);
}

namespace {
// tokens [N, C] -> heads [h, N, C/h]
template <typename T>
TensorT<T> split_heads(const TensorT<T>& x, int heads) {
  const int n = x.dim(0), c = x.dim(1);
  return permute(reshape(x, Shape{n, heads, c / heads}), {1, 0, 2});
}
}  // namespace

template <typename T>
TensorT<T> BfeModuleT<T>::attention_logits(const TensorT<T>& q_tokens,
                                           const TensorT<T>& kv_tokens) const {
  TensorT<T> qh = split_heads(q_proj.forward(q_tokens), cfg.heads);
  TensorT<T> kh = split_heads(k_proj.forward(kv_tokens), cfg.heads);
  // the governing equation divides by sqrt(C_a), not the per-head width
  return scale(bmm(qh, permute(kh, {0, 2, 1})),
               static_cast<T>(1.0 / std::sqrt(static_cast<double>(cfg.channels_a))));
}

template <typename T>
TensorT<T> BfeModuleT<T>::forward(const TensorT<T>& s, const std::vector<TensorT<T>>& p) const {
  const int d = cfg.query_downsample;
  const int hs = s.dim(1), ws = s.dim(2);
  TensorT<T> q_tokens = tokenize_generic(s);
  TensorT<T> kv_tokens = tokenize_specific(p);
  TensorT<T> a = attention_logits(q_tokens, kv_tokens);       // [h, Nq, Nkv]
  TensorT<T> vh = split_heads(v_proj.forward(kv_tokens), cfg.heads);
  TensorT<T> xh = bmm(softmax_lastdim(a), vh);                // [h, Nq, C_a/h]
  TensorT<T> x_tokens =
      reshape(permute(xh, {1, 0, 2}), Shape{xh.dim(1), cfg.channels_a});
  // back to a map at the query resolution, then up to the input resolution
  TensorT<T> x_map = tokens_to_map(x_tokens, hs / d, ws / d);
  TensorT<T> x_up = (d == 1) ? x_map : upsample_bilinear(x_map, d);
  // feed-forward WITHOUT its residual: the skip here is the raw generic map,
  // which makes a zero-initialized output layer an exact identity
  TensorT<T> y = tokens_to_map(ffn.branch(map_to_tokens(x_up)), hs, ws);
  return add(s, y);
}

template <typename T>
void BfeModuleT<T>::collect_params(const std::string& prefix, ParamList<T>& out) const {
  out.push_back({prefix + ".tokenizer.weight", tok_weight});
  q_proj.collect_params(prefix + ".q", out);
  k_proj.collect_params(prefix + ".k", out);
  v_proj.collect_params(prefix + ".v", out);
  ffn.collect_params(prefix + ".ffn", out);
}

template struct BfeModuleT<float>;
template struct BfeModuleT<double>;

}  // namespace bridgenet
