#pragma once
// Full network assembly. A small pyramid encoder produces task-generic maps
// at three strides; per-(scale, task) decoders turn them into task-specific
// maps with auxiliary ("initial") predictions for deep supervision; the
// pattern-propagation block mixes tasks at the coarsest scale; per scale, the
// bridge extractor cross-attends generic against task tokens and the refiner
// stacks fuse the bridge back into each task map, coarse to fine; finally the
// per-task multi-scale features are aggregated and decoded to full-resolution
// predictions. A baseline path runs the same encoder/decoders/heads with all
// cross-task machinery structurally removed.

#include <optional>
#include <string>
#include <vector>

#include "bridgenet/bfe.hpp"
#include "bridgenet/nn.hpp"
#include "bridgenet/ops.hpp"
#include "bridgenet/tensor.hpp"
#include "bridgenet/tfr.hpp"
#include "bridgenet/tpp.hpp"

namespace bridgenet {

// ---------------------------------------------------------------------------
// task descriptions
// ---------------------------------------------------------------------------
enum class TaskKind { categorical, regression, unit_vector, binary };
enum class TaskMetric { miou, rmse, mean_angle, max_f, ods_f };

struct TaskSpec {
  std::string name;
  TaskKind kind = TaskKind::categorical;
  int channels = 1;  // class count for categorical, channel count otherwise
  TaskMetric metric = TaskMetric::miou;
  bool lower_is_better = false;  // direction of the chosen metric

  void validate() const;
};

// the four standard tasks with consistent loss/metric/direction choices
TaskSpec segmentation_task(int num_classes, const std::string& name = "seg");
TaskSpec depth_task(const std::string& name = "depth");
TaskSpec normals_task(const std::string& name = "normals");
TaskSpec edges_task(const std::string& name = "edges");

// ---------------------------------------------------------------------------
// model configuration
// ---------------------------------------------------------------------------
struct ModelConfig {
  int image_h = 64, image_w = 64;
  std::vector<int> strides{4, 8, 16};  // finest -> coarsest; ratio 2 steps
  int channels = 32;                   // shared width C_s = C_p = C_a
  std::vector<TaskSpec> tasks;
  int tfr_depth = 2;  // refiner layers: 2 base, 4 large, 6 huge
  int heads = 2;
  int query_downsample = 2;
  // key/value pooling per scale, finest -> coarsest; the largest ratio sits
  // at the finest scale so token counts stay balanced across scales
  std::vector<int> kv_downsample{8, 4, 2};
  bool use_tpp = true, use_bfe = true, use_tfr = true;

  int num_scales() const { return static_cast<int>(strides.size()); }
  int num_tasks() const { return static_cast<int>(tasks.size()); }
  void validate() const;
};

// ---------------------------------------------------------------------------
// ground truth + deep-supervision downsampling (plain data ops, no tape)
// ---------------------------------------------------------------------------
template <typename T>
struct TaskTargetT {
  IntTensor labels;   // categorical: [H, W], ignore = -1
  TensorT<T> values;  // regression/unit_vector: [C, H, W]; binary: [H, W]
  TensorT<T> mask;    // [H, W], > 0 where supervision is valid
};

IntTensor downsample_labels_nearest(const IntTensor& labels, int factor);
template <typename T>
TensorT<T> downsample_box_mean(const TensorT<T>& x, int factor);
template <typename T>
TensorT<T> downsample_max_pool(const TensorT<T>& x, int factor);
template <typename T>
TensorT<T> downsample_mask_min(const TensorT<T>& mask, int factor);
// dispatches on the task kind: nearest labels / box-mean values (re-normalized
// for unit-vector fields) / max-pooled binary maps; masks shrink by min-pool
template <typename T>
TaskTargetT<T> downsample_target(const TaskSpec& spec, const TaskTargetT<T>& t, int factor);

// ---------------------------------------------------------------------------
// encoder: 3x3 conv stages, stride-2 stem down to the finest scale, one
// refinement conv there, then one stride-2 stage per additional scale
// ---------------------------------------------------------------------------
template <typename T>
struct ConvStageT {
  TensorT<T> weight;  // [C_out, C_in, 3, 3]
  TensorT<T> bias;    // [C_out]
  int stride = 1;

  ConvStageT() = default;
  ConvStageT(int c_in, int c_out, int stride, Rng& rng);
  TensorT<T> forward(const TensorT<T>& x) const;  // conv + activation
  void collect_params(const std::string& prefix, ParamList<T>& out) const;
};

template <typename T>
struct PyramidEncoderT {
  std::vector<ConvStageT<T>> stem;  // image -> finest-stride features
  std::vector<ConvStageT<T>> down;  // one per extra scale, stride 2

  PyramidEncoderT() = default;
  PyramidEncoderT(const ModelConfig& cfg, Rng& rng);
  // finest-first pyramid, one map per configured stride
  std::vector<TensorT<T>> forward(const TensorT<T>& image) const;
  void collect_params(const std::string& prefix, ParamList<T>& out) const;
};

// ---------------------------------------------------------------------------
// per-(scale, task) preliminary decoder: depthwise-separable conv producing
// the task map, plus a 1x1 head for the auxiliary prediction
// ---------------------------------------------------------------------------
template <typename T>
struct TaskDecoderT {
  DwSepDilatedConvT<T> conv;  // C_s -> C_p
  Conv1x1T<T> init_head;      // C_p -> task output channels

  TaskDecoderT() = default;
  TaskDecoderT(int c_s, int c_p, int out_channels, Rng& rng);
  TensorT<T> features(const TensorT<T>& s) const;
  void collect_params(const std::string& prefix, ParamList<T>& out) const;
};

// ---------------------------------------------------------------------------
// the network
// ---------------------------------------------------------------------------
template <typename T>
struct ModelOutputsT {
  std::vector<TensorT<T>> finals;                 // per task, [C_task, H0, W0]
  std::vector<std::vector<TensorT<T>>> initials;  // [scale][task], feature res
};

template <typename T>
struct BridgeNetT {
  ModelConfig cfg;
  PyramidEncoderT<T> encoder;
  std::vector<std::vector<TaskDecoderT<T>>> decoders;  // [scale][task]
  std::optional<TppModuleT<T>> tpp;                    // coarsest scale only
  std::vector<BfeModuleT<T>> bfe;                      // per scale; empty if off
  std::vector<std::vector<TfrStackT<T>>> tfr;          // [scale][task]; empty if off
  std::vector<Conv1x1T<T>> agg_fuse;                   // per task: 3C -> C
  std::vector<DwSepDilatedConvT<T>> head_mid;          // per task, half resolution
  std::vector<Conv1x1T<T>> head_out;                   // per task: C -> channels

  BridgeNetT() = default;
  BridgeNetT(const ModelConfig& c, Rng& rng);

  std::vector<TensorT<T>> encode(const TensorT<T>& image) const;
  // fills feats[scale][task] and initials[scale][task]; mixes the coarsest
  // scale through the pattern propagator when allow_tpp and the flag agree
  void preliminary_decode(const std::vector<TensorT<T>>& pyramid,
                          std::vector<std::vector<TensorT<T>>>& feats,
                          std::vector<std::vector<TensorT<T>>>& initials,
                          bool allow_tpp) const;
  // full pipeline with whatever interaction blocks the config enables
  ModelOutputsT<T> forward(const TensorT<T>& image) const;
  // shared encoder + independent decoders/heads, no cross-task machinery
  ModelOutputsT<T> baseline_forward(const TensorT<T>& image) const;

  void collect_params(const std::string& prefix, ParamList<T>& out) const;

 private:
  ModelOutputsT<T> aggregate_heads(std::vector<std::vector<TensorT<T>>>&& refined,
                                   std::vector<std::vector<TensorT<T>>>&& initials) const;
};

// ---------------------------------------------------------------------------
// losses: final prediction at full resolution + deep supervision of every
// initial prediction against downsampled ground truth; all weights 1
// ---------------------------------------------------------------------------
template <typename T>
struct LossBreakdownT {
  TensorT<T> total;                        // scalar, lives on the active tape
  std::vector<T> final_terms;              // per task
  std::vector<std::vector<T>> initial_terms;  // [scale][task]
};

// single-prediction loss for a task kind (used for finals and initials alike)
template <typename T>
TensorT<T> task_loss(const TaskSpec& spec, const TensorT<T>& pred, const TaskTargetT<T>& target);

template <typename T>
LossBreakdownT<T> compute_losses(const ModelConfig& cfg, const ModelOutputsT<T>& out,
                                 const std::vector<TaskTargetT<T>>& targets);

extern template struct ConvStageT<float>;
extern template struct ConvStageT<double>;
extern template struct PyramidEncoderT<float>;
extern template struct PyramidEncoderT<double>;
extern template struct TaskDecoderT<float>;
extern template struct TaskDecoderT<double>;
extern template struct BridgeNetT<float>;
extern template struct BridgeNetT<double>;

using BridgeNet = BridgeNetT<float>;
using ModelOutputs = ModelOutputsT<float>;
using TaskTarget = TaskTargetT<float>;
using LossBreakdown = LossBreakdownT<float>;

}  // namespace bridgenet
