#pragma once
// Evaluation metrics for the four dense tasks, plus the relative-gain
// arithmetic used to compare a multi-task model against single-task
// references. Every metric is backed by a mergeable accumulator (integer
// counts and plain sums), so sharded evaluation combines partial results by
// merging — never by averaging — and reproduces the single-pass result
// exactly. All arithmetic is double precision.

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "bridgenet/tensor.hpp"

namespace bridgenet {

// number of points in the 0.01, 0.02, ..., 1.00 threshold sweep; zero is
// excluded because probability >= threshold would turn an all-zero map into
// an all-positive one
inline constexpr int kThresholdSteps = 100;

// ---------------------------------------------------------------------------
// segmentation: mean intersection-over-union from a global confusion matrix
// ---------------------------------------------------------------------------
struct ConfusionMatrix {
  int num_classes = 0;
  std::vector<int64_t> counts;  // [gt * num_classes + pred]

  ConfusionMatrix() = default;
  explicit ConfusionMatrix(int num_classes);
  // accumulate one prediction/label pair; ignore_index pixels are skipped
  void add(const IntTensor& pred, const IntTensor& gt, int ignore_index = -1);
  void merge(const ConfusionMatrix& other);
  int64_t total() const;
  // mean IoU over the classes that appear in the ground truth
  double miou() const;
};

// one-shot wrapper over a single map pair
double miou(const IntTensor& pred, const IntTensor& gt, int num_classes, int ignore_index = -1);

// ---------------------------------------------------------------------------
// regression: root-mean-square error over masked pixels
// ---------------------------------------------------------------------------
struct SquaredErrorAccumulator {
  double sum_sq = 0.0;
  int64_t count = 0;

  void add(const TensorF& pred, const TensorF& gt, const TensorF& mask);
  void merge(const SquaredErrorAccumulator& other);
  double rmse() const;  // throws if nothing was accumulated
};

double rmse(const TensorF& pred, const TensorF& gt, const TensorF& mask);

// ---------------------------------------------------------------------------
// surface orientation: mean angular error in degrees; predictions are
// normalized internally, and an all-zero prediction counts as 90 degrees
// ---------------------------------------------------------------------------
struct AngleErrorAccumulator {
  double sum_deg = 0.0;
  int64_t count = 0;

  void add(const TensorF& pred, const TensorF& gt, const TensorF& mask);
  void merge(const AngleErrorAccumulator& other);
  double mean_deg() const;  // throws if nothing was accumulated
};

double mean_angle_error(const TensorF& pred, const TensorF& gt, const TensorF& mask);

// ---------------------------------------------------------------------------
// saliency-style binary maps: maximum F1 over the shared threshold sweep.
// Counts at each threshold treat probability >= threshold as positive;
// precision (or recall) defaults to 1 when it has no positives to judge.
// ---------------------------------------------------------------------------
struct BinaryFAccumulator {
  std::array<int64_t, kThresholdSteps> tp{}, fp{}, fn{};

  void add(const TensorF& probs, const TensorF& gt);
  void merge(const BinaryFAccumulator& other);
  double max_f() const;
};

double max_f(const std::vector<TensorF>& probs, const std::vector<TensorF>& gt);

// ---------------------------------------------------------------------------
// edges: dataset-scale F with tolerant matching — a predicted pixel counts
// as correct when a ground-truth edge lies within Chebyshev distance
// `radius`, and vice versa; the score is the best dataset-level F over the
// threshold sweep
// ---------------------------------------------------------------------------
struct EdgeFAccumulator {
  int radius = 1;
  std::array<int64_t, kThresholdSteps> pred_total{}, pred_matched{};
  std::array<int64_t, kThresholdSteps> gt_matched{};
  int64_t gt_total = 0;

  EdgeFAccumulator() = default;
  explicit EdgeFAccumulator(int radius);
  void add(const TensorF& probs, const TensorF& gt);
  void merge(const EdgeFAccumulator& other);
  double ods_f() const;
};

double ods_f(const std::vector<TensorF>& probs, const std::vector<TensorF>& gt, int radius = 1);

// ---------------------------------------------------------------------------
// comparison arithmetic
// ---------------------------------------------------------------------------
// signed percentage improvement of a measured value over a reference;
// positive means better for both metric directions
double relative_gain(double measured, double reference, bool lower_is_better);

// average of per-task gains
double delta_mtl(const std::vector<double>& gains);

// ---------------------------------------------------------------------------
// report
// ---------------------------------------------------------------------------
struct TaskResult {
  std::string name;
  std::string metric_name;
  double value = 0.0;
  bool lower_is_better = false;
  std::optional<double> reference;  // single-task score, when available
  std::optional<double> gain;      // percent, filled by compute_gains
};

struct MetricsReport {
  std::vector<TaskResult> tasks;
  std::optional<double> average_gain;  // percent over tasks, when refs exist
  int64_t samples = 0;

  // fills per-task gains where a reference exists; the average is only
  // computed when every task has one
  void compute_gains();
  std::string to_table() const;  // aligned, human-readable
  std::string to_kv() const;     // one key=value per line
};

}  // namespace bridgenet
