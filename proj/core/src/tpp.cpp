#include "bridgenet/tpp.hpp"

#include <cmath>

namespace bridgenet {

void TppConfig::validate() const {
  if (num_tasks < 1) throw ConfigError("tpp: need at least one task");
  if (heads < 1 || channels_a % heads != 0)
    throw ConfigError("tpp: attention width " + std::to_string(channels_a) +
                      " not divisible by " + std::to_string(heads) + " heads");
  if (channels_a != channels_p)
    throw ConfigError("tpp: attention width must equal task channels for the residual");
}

template <typename T>
TppModuleT<T>::TppModuleT(const TppConfig& c, Rng& rng) : cfg(c) {
  cfg.validate();
  squeeze = Conv1x1T<T>(cfg.num_tasks * cfg.heads, cfg.heads, rng);
  for (int j = 0; j < cfg.num_tasks; ++j) {
    q_proj.emplace_back(cfg.channels_p, cfg.channels_a, rng);
    k_proj.emplace_back(cfg.channels_p, cfg.channels_a, rng);
    v_proj.emplace_back(cfg.channels_p, cfg.channels_a, rng);
    merge.emplace_back(cfg.channels_a, cfg.channels_a, rng);
    ffn.emplace_back(cfg.channels_p, rng);
  }
}

namespace {
// tokens [N, C_a] -> heads [h, N, C_a/h]
template <typename T>
TensorT<T> split_heads(const TensorT<T>& x, int heads) {
  const int n = x.dim(0), c = x.dim(1);
  return permute(reshape(x, Shape{n, heads, c / heads}), {1, 0, 2});
}
// heads [h, N, C_a/h] -> tokens [N, C_a]
template <typename T>
TensorT<T> merge_heads(const TensorT<T>& x) {
  return reshape(permute(x, {1, 0, 2}), Shape{x.dim(1), x.dim(0) * x.dim(2)});
}
}  // namespace

template <typename T>
std::pair<TensorT<T>, TensorT<T>> TppModuleT<T>::task_attention(const TensorT<T>& p_j,
                                                                int j) const {
  if (j < 0 || j >= cfg.num_tasks)
    throw ConfigError("tpp: task index " + std::to_string(j) + " out of range");
  TensorT<T> tokens = map_to_tokens(p_j);  // [N, C_p]
  TensorT<T> qh = split_heads(q_proj[static_cast<size_t>(j)].forward(tokens), cfg.heads);
  TensorT<T> kh = split_heads(k_proj[static_cast<size_t>(j)].forward(tokens), cfg.heads);
  TensorT<T> vh = split_heads(v_proj[static_cast<size_t>(j)].forward(tokens), cfg.heads);
  // A_j = Q_j K_j^T / sqrt(C_a); the divisor follows the governing equation
  // verbatim (not the per-head width)
  TensorT<T> a = scale(bmm(qh, permute(kh, {0, 2, 1})),
                       static_cast<T>(1.0 / std::sqrt(static_cast<double>(cfg.channels_a))));
  return {a, vh};
}

template <typename T>
std::vector<TensorT<T>> TppModuleT<T>::pattern_propagate(
    const std::vector<TensorT<T>>& a, const std::vector<TensorT<T>>& v) const {
  if (static_cast<int>(a.size()) != cfg.num_tasks ||
      static_cast<int>(v.size()) != cfg.num_tasks)
    throw ConfigError("tpp: expected " + std::to_string(cfg.num_tasks) +
                      " attention/value entries, got " + std::to_string(a.size()) + "/" +
                      std::to_string(v.size()));
  // stack task attention maps as channels: [T*h, N, N]
  TensorT<T> stacked = concat(a, 0);
  // squeeze to h shared maps, then normalize rows
  TensorT<T> sm = softmax_lastdim(squeeze.forward(stacked));  // [h, N, N]
  std::vector<TensorT<T>> out;
  out.reserve(static_cast<size_t>(cfg.num_tasks));
  for (int j = 0; j < cfg.num_tasks; ++j) {
    TensorT<T> xj = bmm(sm, v[static_cast<size_t>(j)]);  // [h, N, C_a/h]
    out.push_back(merge[static_cast<size_t>(j)].forward(merge_heads(xj)));
  }
  return out;
}

template <typename T>
std::vector<TensorT<T>> TppModuleT<T>::forward(const std::vector<TensorT<T>>& p) const {
  if (p.empty()) throw ConfigError("tpp: empty task list");
  if (static_cast<int>(p.size()) != cfg.num_tasks)
    throw ConfigError("tpp: expected " + std::to_string(cfg.num_tasks) + " inputs, got " +
                      std::to_string(p.size()));
  for (const auto& pj : p)
    if (pj.shape() != p[0].shape())
      throw ShapeError("tpp: task inputs must share one shape, got " +
                       shape_str(pj.shape()) + " vs " + shape_str(p[0].shape()));
  const int h = p[0].dim(1), w = p[0].dim(2);
  std::vector<TensorT<T>> a, v;
  for (int j = 0; j < cfg.num_tasks; ++j) {
    auto av = task_attention(p[static_cast<size_t>(j)], j);
    a.push_back(std::move(av.first));
    v.push_back(std::move(av.second));
  }
  std::vector<TensorT<T>> propagated = pattern_propagate(a, v);
  std::vector<TensorT<T>> out;
  out.reserve(p.size());
  for (int j = 0; j < cfg.num_tasks; ++j) {
    // residual around the attention path, then the residual FFN
    TensorT<T> tokens = map_to_tokens(p[static_cast<size_t>(j)]);
    TensorT<T> y = add(tokens, propagated[static_cast<size_t>(j)]);
    y = ffn[static_cast<size_t>(j)].forward(y);
    out.push_back(tokens_to_map(y, h, w));
  }
  return out;
}

template <typename T>
void TppModuleT<T>::collect_params(const std::string& prefix, ParamList<T>& out) const {
  squeeze.collect_params(prefix + ".squeeze", out);
  for (int j = 0; j < cfg.num_tasks; ++j) {
    const std::string tj = prefix + ".task" + std::to_string(j);
    q_proj[static_cast<size_t>(j)].collect_params(tj + ".q", out);
    k_proj[static_cast<size_t>(j)].collect_params(tj + ".k", out);
    v_proj[static_cast<size_t>(j)].collect_params(tj + ".v", out);
    merge[static_cast<size_t>(j)].collect_params(tj + ".merge", out);
    ffn[static_cast<size_t>(j)].collect_params(tj + ".ffn", out);
  }
}

template struct TppModuleT<float>;
template struct TppModuleT<double>;

}  // namespace bridgenet
