#include "bridgenet/model.hpp"

#include <cmath>

namespace bridgenet {

// ---------------------------------------------------------------------------
// task specs
// ---------------------------------------------------------------------------
void TaskSpec::validate() const {
  if (name.empty()) throw ConfigError("task: name must not be empty");
  switch (kind) {
    case TaskKind::categorical:
      if (channels < 2) throw ConfigError("task " + name + ": need at least 2 classes");
      break;
    case TaskKind::unit_vector:
      if (channels != 3) throw ConfigError("task " + name + ": unit-vector maps have 3 channels");
      break;
    case TaskKind::binary:
      if (channels != 1) throw ConfigError("task " + name + ": binary maps have 1 channel");
      break;
    case TaskKind::regression:
      if (channels < 1) throw ConfigError("task " + name + ": need at least 1 channel");
      break;
  }
}

TaskSpec segmentation_task(int num_classes, const std::string& name) {
  return {name, TaskKind::categorical, num_classes, TaskMetric::miou, false};
}
TaskSpec depth_task(const std::string& name) {
  return {name, TaskKind::regression, 1, TaskMetric::rmse, true};
}
TaskSpec normals_task(const std::string& name) {
  return {name, TaskKind::unit_vector, 3, TaskMetric::mean_angle, true};
}
TaskSpec edges_task(const std::string& name) {
  return {name, TaskKind::binary, 1, TaskMetric::ods_f, false};
}

// ---------------------------------------------------------------------------
// config validation
// ---------------------------------------------------------------------------
namespace {
bool is_pow2(int v) { return v > 0 && (v & (v - 1)) == 0; }
}  // namespace

void ModelConfig::validate() const {
  if (tasks.empty()) throw ConfigError("model: no tasks configured");
  for (const auto& t : tasks) t.validate();
  if (strides.empty()) throw ConfigError("model: no scales configured");
  if (kv_downsample.size() != strides.size())
    throw ConfigError("model: need one key/value downsample per scale");
  if (!is_pow2(strides[0]) || strides[0] < 2)
    throw ConfigError("model: finest stride must be a power of two >= 2");
  for (size_t i = 1; i < strides.size(); ++i)
    if (strides[i] != 2 * strides[i - 1])
      throw ConfigError("model: strides must double between scales");
  if (channels < 1 || heads < 1 || channels % heads != 0)
    throw ConfigError("model: width " + std::to_string(channels) + " not divisible by " +
                      std::to_string(heads) + " heads");
  if (tfr_depth < 1) throw ConfigError("model: refiner depth must be at least 1");
  if (query_downsample < 1) throw ConfigError("model: query downsample must be positive");
  for (size_t i = 0; i < strides.size(); ++i) {
    const int s = strides[i];
    if (image_h % s != 0 || image_w % s != 0)
      throw ConfigError("model: image " + std::to_string(image_h) + "x" +
                        std::to_string(image_w) + " not divisible by stride " +
                        std::to_string(s));
    const int fh = image_h / s, fw = image_w / s;
    if (fh % query_downsample != 0 || fw % query_downsample != 0)
      throw ConfigError("model: scale " + std::to_string(i) +
                        " features not divisible by the query downsample");
    const int l = kv_downsample[i];
    if (l < 1 || fh % l != 0 || fw % l != 0)
      throw ConfigError("model: scale " + std::to_string(i) +
                        " features not divisible by key/value downsample " + std::to_string(l));
  }
}

// ---------------------------------------------------------------------------
// ground-truth downsampling
// ---------------------------------------------------------------------------
namespace {
// leading spatial geometry of a [H,W] or [C,H,W] tensor
void spatial_of(const Shape& s, int& c, int& h, int& w) {
  if (s.size() == 2) {
    c = 1;
    h = s[0];
    w = s[1];
  } else if (s.size() == 3) {
    c = s[0];
    h = s[1];
    w = s[2];
  } else {
    throw ShapeError("downsample: expected [H,W] or [C,H,W], got " + shape_str(s));
  }
}

void check_factor(int h, int w, int factor) {
  if (factor < 1 || h % factor != 0 || w % factor != 0)
    throw ConfigError("downsample: size " + std::to_string(h) + "x" + std::to_string(w) +
                      " not divisible by factor " + std::to_string(factor));
}
}  // namespace

IntTensor downsample_labels_nearest(const IntTensor& labels, int factor) {
  if (factor == 1) return labels;
  const int h = labels.dim(0), w = labels.dim(1);
  check_factor(h, w, factor);
  const int oh = h / factor, ow = w / factor;
  IntTensor out(Shape{oh, ow});
  // cell's top-left sample — the standard strided nearest-neighbor downscale
  for (int y = 0; y < oh; ++y)
    for (int x = 0; x < ow; ++x)
      out.values()[static_cast<size_t>(y * ow + x)] =
          labels.values()[static_cast<size_t>(y * factor * w + x * factor)];
  return out;
}

template <typename T>
TensorT<T> downsample_box_mean(const TensorT<T>& x, int factor) {
  if (factor == 1) return x;
  int c, h, w;
  spatial_of(x.shape(), c, h, w);
  check_factor(h, w, factor);
  const int oh = h / factor, ow = w / factor;
  Shape out_shape = x.shape();
  out_shape[out_shape.size() - 2] = oh;
  out_shape[out_shape.size() - 1] = ow;
  TensorT<T> out(out_shape, T(0));
  const T inv = T(1) / static_cast<T>(factor * factor);
  for (int ch = 0; ch < c; ++ch)
    for (int y = 0; y < oh; ++y)
      for (int x2 = 0; x2 < ow; ++x2) {
        T acc = T(0);
        for (int dy = 0; dy < factor; ++dy)
          for (int dx = 0; dx < factor; ++dx)
            acc += x.values()[static_cast<size_t>((ch * h + y * factor + dy) * w + x2 * factor + dx)];
        out.values()[static_cast<size_t>((ch * oh + y) * ow + x2)] = acc * inv;
      }
  return out;
}

template <typename T>
TensorT<T> downsample_max_pool(const TensorT<T>& x, int factor) {
  if (factor == 1) return x;
  int c, h, w;
  spatial_of(x.shape(), c, h, w);
  check_factor(h, w, factor);
  const int oh = h / factor, ow = w / factor;
  Shape out_shape = x.shape();
  out_shape[out_shape.size() - 2] = oh;
  out_shape[out_shape.size() - 1] = ow;
  TensorT<T> out(out_shape, T(0));
  for (int ch = 0; ch < c; ++ch)
    for (int y = 0; y < oh; ++y)
      for (int x2 = 0; x2 < ow; ++x2) {
        T best = x.values()[static_cast<size_t>((ch * h + y * factor) * w + x2 * factor)];
        for (int dy = 0; dy < factor; ++dy)
          for (int dx = 0; dx < factor; ++dx)
            best = std::max(best, x.values()[static_cast<size_t>(
                                      (ch * h + y * factor + dy) * w + x2 * factor + dx)]);
        out.values()[static_cast<size_t>((ch * oh + y) * ow + x2)] = best;
      }
  return out;
}

template <typename T>
TensorT<T> downsample_mask_min(const TensorT<T>& mask, int factor) {
  if (factor == 1) return mask;
  int c, h, w;
  spatial_of(mask.shape(), c, h, w);
  check_factor(h, w, factor);
  const int oh = h / factor, ow = w / factor;
  Shape out_shape = mask.shape();
  out_shape[out_shape.size() - 2] = oh;
  out_shape[out_shape.size() - 1] = ow;
  TensorT<T> out(out_shape, T(0));
  for (int ch = 0; ch < c; ++ch)
    for (int y = 0; y < oh; ++y)
      for (int x2 = 0; x2 < ow; ++x2) {
        T worst = mask.values()[static_cast<size_t>((ch * h + y * factor) * w + x2 * factor)];
        for (int dy = 0; dy < factor; ++dy)
          for (int dx = 0; dx < factor; ++dx)
            worst = std::min(worst, mask.values()[static_cast<size_t>(
                                        (ch * h + y * factor + dy) * w + x2 * factor + dx)]);
        out.values()[static_cast<size_t>((ch * oh + y) * ow + x2)] = worst;
      }
  return out;
}

template <typename T>
TaskTargetT<T> downsample_target(const TaskSpec& spec, const TaskTargetT<T>& t, int factor) {
  TaskTargetT<T> out;
  out.mask = downsample_mask_min(t.mask, factor);
  switch (spec.kind) {
    case TaskKind::categorical:
      out.labels = downsample_labels_nearest(t.labels, factor);
      break;
    case TaskKind::regression:
      out.values = downsample_box_mean(t.values, factor);
      break;
    case TaskKind::unit_vector: {
      TensorT<T> v = downsample_box_mean(t.values, factor);
      // averaging unit vectors shrinks them; re-normalize, defaulting to the
      // straight-up normal when a cell cancels out
      const int h = v.dim(1), w = v.dim(2);
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
          T nx = v.values()[static_cast<size_t>(y * w + x)];
          T ny = v.values()[static_cast<size_t>((h + y) * w + x)];
          T nz = v.values()[static_cast<size_t>((2 * h + y) * w + x)];
          T n = std::sqrt(nx * nx + ny * ny + nz * nz);
          if (n < T(1e-8)) {
            nx = T(0);
            ny = T(0);
            nz = T(1);
            n = T(1);
          }
          v.values()[static_cast<size_t>(y * w + x)] = nx / n;
          v.values()[static_cast<size_t>((h + y) * w + x)] = ny / n;
          v.values()[static_cast<size_t>((2 * h + y) * w + x)] = nz / n;
        }
      out.values = v;
      break;
    }
    case TaskKind::binary:
      out.values = downsample_max_pool(t.values, factor);
      break;
  }
  return out;
}

// ---------------------------------------------------------------------------
// encoder
// ---------------------------------------------------------------------------
template <typename T>
ConvStageT<T>::ConvStageT(int c_in, int c_out, int s, Rng& rng) : stride(s) {
  weight = TensorT<T>(Shape{c_out, c_in, 3, 3}, T(0));
  kaiming_uniform(weight, c_in * 9, rng);
  weight.set_requires_grad(true);
  bias = TensorT<T>(Shape{c_out}, T(0));
  bias.set_requires_grad(true);
}

template <typename T>
TensorT<T> ConvStageT<T>::forward(const TensorT<T>& x) const {
  return conv_act(conv2d(x, weight, bias, stride, 1, 1, 1));
}

template <typename T>
void ConvStageT<T>::collect_params(const std::string& prefix, ParamList<T>& out) const {
  out.push_back({prefix + ".weight", weight});
  out.push_back({prefix + ".bias", bias});
}

template <typename T>
PyramidEncoderT<T>::PyramidEncoderT(const ModelConfig& cfg, Rng& rng) {
  int steps = 0;
  for (int s = cfg.strides[0]; s > 1; s /= 2) ++steps;
  int c_in = 3;
  for (int k = 0; k < steps; ++k) {
    stem.emplace_back(c_in, cfg.channels, 2, rng);
    c_in = cfg.channels;
  }
  stem.emplace_back(cfg.channels, cfg.channels, 1, rng);  // refine at the finest scale
  for (int i = 1; i < cfg.num_scales(); ++i) down.emplace_back(cfg.channels, cfg.channels, 2, rng);
}

template <typename T>
std::vector<TensorT<T>> PyramidEncoderT<T>::forward(const TensorT<T>& image) const {
  if (image.ndim() != 3 || image.dim(0) != 3)
    throw ShapeError("encoder: image must be [3, H, W], got " + shape_str(image.shape()));
  TensorT<T> x = image;
  for (const auto& stage : stem) x = stage.forward(x);
  std::vector<TensorT<T>> pyramid{x};
  for (const auto& stage : down) {
    x = stage.forward(x);
    pyramid.push_back(x);
  }
  return pyramid;
}

template <typename T>
void PyramidEncoderT<T>::collect_params(const std::string& prefix, ParamList<T>& out) const {
  for (size_t k = 0; k < stem.size(); ++k)
    stem[k].collect_params(prefix + ".stem" + std::to_string(k), out);
  for (size_t k = 0; k < down.size(); ++k)
    down[k].collect_params(prefix + ".down" + std::to_string(k), out);
}

// ---------------------------------------------------------------------------
// preliminary decoder
// ---------------------------------------------------------------------------
template <typename T>
TaskDecoderT<T>::TaskDecoderT(int c_s, int c_p, int out_channels, Rng& rng)
    : conv(c_s, c_p, 1, rng), init_head(c_p, out_channels, rng) {}

template <typename T>
TensorT<T> TaskDecoderT<T>::features(const TensorT<T>& s) const {
  return conv_act(conv.forward(s));
}

template <typename T>
void TaskDecoderT<T>::collect_params(const std::string& prefix, ParamList<T>& out) const {
  conv.collect_params(prefix + ".conv", out);
  init_head.collect_params(prefix + ".init_head", out);
}

// ---------------------------------------------------------------------------
// the network
// ---------------------------------------------------------------------------
template <typename T>
BridgeNetT<T>::BridgeNetT(const ModelConfig& c, Rng& rng) : cfg(c) {
  cfg.validate();
  encoder = PyramidEncoderT<T>(cfg, rng);
  const int ns = cfg.num_scales(), nt = cfg.num_tasks();
  decoders.resize(static_cast<size_t>(ns));
  for (int i = 0; i < ns; ++i)
    for (int j = 0; j < nt; ++j)
      decoders[static_cast<size_t>(i)].emplace_back(cfg.channels, cfg.channels,
                                                    cfg.tasks[static_cast<size_t>(j)].channels,
                                                    rng);
  if (cfg.use_tpp) {
    TppConfig tc;
    tc.num_tasks = nt;
    tc.channels_p = cfg.channels;
    tc.channels_a = cfg.channels;
    tc.heads = cfg.heads;
    tpp.emplace(tc, rng);
  }
  if (cfg.use_bfe) {
    for (int i = 0; i < ns; ++i) {
      BfeConfig bc;
      bc.query_downsample = cfg.query_downsample;
      bc.kv_downsample = cfg.kv_downsample[static_cast<size_t>(i)];
      bc.channels_s = cfg.channels;
      bc.channels_p = cfg.channels;
      bc.channels_a = cfg.channels;
      bc.heads = cfg.heads;
      bfe.emplace_back(bc, rng);
    }
  }
  if (cfg.use_tfr) {
    TfrConfig fc;
    fc.depth = cfg.tfr_depth;
    fc.channels_a = cfg.channels;
    fc.channels_p = cfg.channels;
    tfr.resize(static_cast<size_t>(ns));
    for (int i = 0; i < ns; ++i)
      for (int j = 0; j < nt; ++j) tfr[static_cast<size_t>(i)].emplace_back(fc, rng);
  }
  for (int j = 0; j < nt; ++j) {
    agg_fuse.emplace_back(ns * cfg.channels, cfg.channels, rng);
    head_mid.emplace_back(cfg.channels, cfg.channels, 1, rng);
    head_out.emplace_back(cfg.channels, cfg.tasks[static_cast<size_t>(j)].channels, rng);
  }
}

template <typename T>
std::vector<TensorT<T>> BridgeNetT<T>::encode(const TensorT<T>& image) const {
  if (image.ndim() != 3 || image.dim(0) != 3 || image.dim(1) != cfg.image_h ||
      image.dim(2) != cfg.image_w)
    throw ShapeError("model: image must be [3, " + std::to_string(cfg.image_h) + ", " +
                     std::to_string(cfg.image_w) + "], got " + shape_str(image.shape()));
  return encoder.forward(image);
}

template <typename T>
void BridgeNetT<T>::preliminary_decode(const std::vector<TensorT<T>>& pyramid,
                                       std::vector<std::vector<TensorT<T>>>& feats,
                                       std::vector<std::vector<TensorT<T>>>& initials,
                                       bool allow_tpp) const {
  const int ns = cfg.num_scales(), nt = cfg.num_tasks();
  feats.assign(static_cast<size_t>(ns), {});
  initials.assign(static_cast<size_t>(ns), {});
  for (int i = 0; i < ns; ++i)
    for (int j = 0; j < nt; ++j)
      feats[static_cast<size_t>(i)].push_back(
          decoders[static_cast<size_t>(i)][static_cast<size_t>(j)].features(
              pyramid[static_cast<size_t>(i)]));
  // task-pattern mixing at the coarsest scale, before the auxiliary heads
  if (allow_tpp && cfg.use_tpp && tpp.has_value())
    feats[static_cast<size_t>(ns - 1)] = tpp->forward(feats[static_cast<size_t>(ns - 1)]);
  for (int i = 0; i < ns; ++i)
    for (int j = 0; j < nt; ++j)
      initials[static_cast<size_t>(i)].push_back(
          decoders[static_cast<size_t>(i)][static_cast<size_t>(j)].init_head.forward(
              feats[static_cast<size_t>(i)][static_cast<size_t>(j)]));
}

template <typename T>
ModelOutputsT<T> BridgeNetT<T>::forward(const TensorT<T>& image) const {
  const int ns = cfg.num_scales(), nt = cfg.num_tasks();
  std::vector<TensorT<T>> pyramid = encode(image);
  std::vector<std::vector<TensorT<T>>> feats, initials;
  preliminary_decode(pyramid, feats, initials, /*allow_tpp=*/true);
  std::vector<std::vector<TensorT<T>>> refined(static_cast<size_t>(ns));
  for (int i = ns - 1; i >= 0; --i) {
    // bridge map for this scale (the raw generic map when the extractor is off)
    TensorT<T> bridge = cfg.use_bfe
                            ? bfe[static_cast<size_t>(i)].forward(pyramid[static_cast<size_t>(i)],
                                                                  feats[static_cast<size_t>(i)])
                            : pyramid[static_cast<size_t>(i)];
    refined[static_cast<size_t>(i)].resize(static_cast<size_t>(nt));
    for (int j = 0; j < nt; ++j) {
      TensorT<T> fused = feats[static_cast<size_t>(i)][static_cast<size_t>(j)];
      if (i + 1 < ns)
        fused = add(fused, upsample_bilinear(refined[static_cast<size_t>(i + 1)][static_cast<size_t>(j)], 2));
      TensorT<T>& slot = refined[static_cast<size_t>(i)][static_cast<size_t>(j)];
      if (cfg.use_tfr)
        slot = tfr[static_cast<size_t>(i)][static_cast<size_t>(j)].forward(bridge, fused);
      else if (cfg.use_bfe)
        slot = add(fused, bridge);  // parameter-free injection when the refiner is off
      else
        slot = fused;
    }
  }
  return aggregate_heads(std::move(refined), std::move(initials));
}

template <typename T>
ModelOutputsT<T> BridgeNetT<T>::baseline_forward(const TensorT<T>& image) const {
  const int ns = cfg.num_scales(), nt = cfg.num_tasks();
  std::vector<TensorT<T>> pyramid = encode(image);
  std::vector<std::vector<TensorT<T>>> feats, initials;
  preliminary_decode(pyramid, feats, initials, /*allow_tpp=*/false);
  // independent per-task top-down decoding, no cross-task paths
  std::vector<std::vector<TensorT<T>>> refined(static_cast<size_t>(ns));
  for (int i = ns - 1; i >= 0; --i) {
    refined[static_cast<size_t>(i)].resize(static_cast<size_t>(nt));
    for (int j = 0; j < nt; ++j) {
      TensorT<T> fused = feats[static_cast<size_t>(i)][static_cast<size_t>(j)];
      if (i + 1 < ns)
        fused = add(fused, upsample_bilinear(refined[static_cast<size_t>(i + 1)][static_cast<size_t>(j)], 2));
      refined[static_cast<size_t>(i)][static_cast<size_t>(j)] = fused;
    }
  }
  return aggregate_heads(std::move(refined), std::move(initials));
}

template <typename T>
ModelOutputsT<T> BridgeNetT<T>::aggregate_heads(
    std::vector<std::vector<TensorT<T>>>&& refined,
    std::vector<std::vector<TensorT<T>>>&& initials) const {
  const int ns = cfg.num_scales(), nt = cfg.num_tasks();
  ModelOutputsT<T> out;
  out.initials = std::move(initials);
  for (int j = 0; j < nt; ++j) {
    std::vector<TensorT<T>> pyramid_j;
    for (int i = 0; i < ns; ++i) {
      const int factor = cfg.strides[static_cast<size_t>(i)] / cfg.strides[0];
      TensorT<T> r = refined[static_cast<size_t>(i)][static_cast<size_t>(j)];
      pyramid_j.push_back(factor == 1 ? r : upsample_bilinear(r, factor));
    }
    TensorT<T> fused = conv_act(agg_fuse[static_cast<size_t>(j)].forward(concat(pyramid_j, 0)));
    TensorT<T> up = upsample_bilinear(fused, 2);  // half of the input resolution
    TensorT<T> mid = conv_act(head_mid[static_cast<size_t>(j)].forward(up));
    TensorT<T> logits = head_out[static_cast<size_t>(j)].forward(mid);
    const int remaining = cfg.strides[0] / 2;
    out.finals.push_back(remaining == 1 ? logits : upsample_bilinear(logits, remaining));
  }
  return out;
}

template <typename T>
void BridgeNetT<T>::collect_params(const std::string& prefix, ParamList<T>& out) const {
  encoder.collect_params(prefix + ".encoder", out);
  const int ns = cfg.num_scales(), nt = cfg.num_tasks();
  for (int i = 0; i < ns; ++i)
    for (int j = 0; j < nt; ++j)
      decoders[static_cast<size_t>(i)][static_cast<size_t>(j)].collect_params(
          prefix + ".decoder.s" + std::to_string(i) + "." + cfg.tasks[static_cast<size_t>(j)].name,
          out);
  if (tpp.has_value()) tpp->collect_params(prefix + ".tpp", out);
  for (size_t i = 0; i < bfe.size(); ++i)
    bfe[i].collect_params(prefix + ".bfe.s" + std::to_string(i), out);
  for (size_t i = 0; i < tfr.size(); ++i)
    for (size_t j = 0; j < tfr[i].size(); ++j)
      tfr[i][j].collect_params(
          prefix + ".tfr.s" + std::to_string(i) + "." + cfg.tasks[j].name, out);
  for (int j = 0; j < nt; ++j) {
    const std::string& tn = cfg.tasks[static_cast<size_t>(j)].name;
    agg_fuse[static_cast<size_t>(j)].collect_params(prefix + ".head." + tn + ".fuse", out);
    head_mid[static_cast<size_t>(j)].collect_params(prefix + ".head." + tn + ".mid", out);
    head_out[static_cast<size_t>(j)].collect_params(prefix + ".head." + tn + ".out", out);
  }
}

// ---------------------------------------------------------------------------
// losses
// ---------------------------------------------------------------------------
template <typename T>
TensorT<T> task_loss(const TaskSpec& spec, const TensorT<T>& pred, const TaskTargetT<T>& target) {
  switch (spec.kind) {
    case TaskKind::categorical:
      return softmax_xent_2d(pred, target.labels);
    case TaskKind::regression:
      return masked_l1(pred, target.values, target.mask);
    case TaskKind::unit_vector:
      return cosine_loss(pred, target.values, target.mask);
    case TaskKind::binary:
      return weighted_bce(reshape(pred, Shape{pred.dim(1), pred.dim(2)}), target.values,
                          target.mask);
  }
  throw ConfigError("task " + spec.name + ": unknown kind");
}

template <typename T>
LossBreakdownT<T> compute_losses(const ModelConfig& cfg, const ModelOutputsT<T>& out,
                                 const std::vector<TaskTargetT<T>>& targets) {
  const int ns = cfg.num_scales(), nt = cfg.num_tasks();
  if (static_cast<int>(targets.size()) != nt)
    throw ConfigError("losses: expected " + std::to_string(nt) + " targets, got " +
                      std::to_string(targets.size()));
  LossBreakdownT<T> result;
  result.initial_terms.assign(static_cast<size_t>(ns), {});
  TensorT<T> total;
  for (int j = 0; j < nt; ++j) {
    const TaskSpec& spec = cfg.tasks[static_cast<size_t>(j)];
    TensorT<T> term =
        task_loss(spec, out.finals[static_cast<size_t>(j)], targets[static_cast<size_t>(j)]);
    result.final_terms.push_back(term.item());
    total = (j == 0) ? term : add(total, term);
  }
  for (int i = 0; i < ns; ++i) {
    const int factor = cfg.strides[static_cast<size_t>(i)];
    for (int j = 0; j < nt; ++j) {
      const TaskSpec& spec = cfg.tasks[static_cast<size_t>(j)];
      TaskTargetT<T> small = downsample_target(spec, targets[static_cast<size_t>(j)], factor);
      TensorT<T> term =
          task_loss(spec, out.initials[static_cast<size_t>(i)][static_cast<size_t>(j)], small);
      result.initial_terms[static_cast<size_t>(i)].push_back(term.item());
      total = add(total, term);
    }
  }
  result.total = total;
  return result;
}

#define BRIDGENET_INSTANTIATE_MODEL(T)                                                       \
  template struct ConvStageT<T>;                                                             \
  template struct PyramidEncoderT<T>;                                                        \
  template struct TaskDecoderT<T>;                                                           \
  template struct BridgeNetT<T>;                                                             \
  template TensorT<T> downsample_box_mean<T>(const TensorT<T>&, int);                        \
  template TensorT<T> downsample_max_pool<T>(const TensorT<T>&, int);                        \
  template TensorT<T> downsample_mask_min<T>(const TensorT<T>&, int);                        \
  template TaskTargetT<T> downsample_target<T>(const TaskSpec&, const TaskTargetT<T>&, int); \
  template TensorT<T> task_loss<T>(const TaskSpec&, const TensorT<T>&, const TaskTargetT<T>&); \
  template LossBreakdownT<T> compute_losses<T>(const ModelConfig&, const ModelOutputsT<T>&,  \
                                               const std::vector<TaskTargetT<T>>&);

BRIDGENET_INSTANTIATE_MODEL(float)
BRIDGENET_INSTANTIATE_MODEL(double)

}  // namespace bridgenet
