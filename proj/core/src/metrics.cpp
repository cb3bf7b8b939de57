#include "bridgenet/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

namespace bridgenet {

namespace {
constexpr double kPi = 3.14159265358979323846;

double threshold_at(int i) { return static_cast<double>(i + 1) / 100.0; }

void require_same_shape(const Shape& a, const Shape& b, const char* what) {
  if (a != b)
    throw ShapeError(std::string(what) + ": shape mismatch " + shape_str(a) + " vs " +
                     shape_str(b));
}

// spatial footprint shared by map and mask
void require_mask(const TensorF& map, const TensorF& mask, const char* what) {
  const int64_t channels = map.ndim() == 3 ? map.dim(0) : 1;
  if (mask.numel() * channels != map.numel())
    throw ShapeError(std::string(what) + ": mask " + shape_str(mask.shape()) +
                     " does not cover map " + shape_str(map.shape()));
}
}  // namespace

// ---------------------------------------------------------------------------
// mean intersection-over-union
// ---------------------------------------------------------------------------
ConfusionMatrix::ConfusionMatrix(int k) : num_classes(k) {
  if (k <= 0) throw ValueError("confusion matrix: need a positive class count");
  counts.assign(static_cast<size_t>(k) * static_cast<size_t>(k), 0);
}

void ConfusionMatrix::add(const IntTensor& pred, const IntTensor& gt, int ignore_index) {
  if (num_classes <= 0) throw ValueError("confusion matrix: need a positive class count");
  require_same_shape(pred.shape(), gt.shape(), "miou");
  for (int64_t i = 0; i < gt.numel(); ++i) {
    const int32_t g = gt.values()[static_cast<size_t>(i)];
    if (g == ignore_index) continue;
    const int32_t p = pred.values()[static_cast<size_t>(i)];
    if (g < 0 || g >= num_classes || p < 0 || p >= num_classes)
      throw ValueError("miou: label " + std::to_string(g < 0 || g >= num_classes ? g : p) +
                       " outside the " + std::to_string(num_classes) + "-class range");
    counts[static_cast<size_t>(g) * static_cast<size_t>(num_classes) + static_cast<size_t>(p)]++;
  }
}

void ConfusionMatrix::merge(const ConfusionMatrix& other) {
  if (other.num_classes != num_classes)
    throw ValueError("confusion matrix: cannot merge different class counts");
  for (size_t i = 0; i < counts.size(); ++i) counts[i] += other.counts[i];
}

int64_t ConfusionMatrix::total() const {
  int64_t n = 0;
  for (int64_t c : counts) n += c;
  return n;
}

double ConfusionMatrix::miou() const {
  if (total() == 0) throw ValueError("miou: empty evaluation (no labeled pixels)");
  const size_t k = static_cast<size_t>(num_classes);
  double sum = 0.0;
  int present = 0;
  for (size_t c = 0; c < k; ++c) {
    int64_t tp = counts[c * k + c], gt_count = 0, pred_count = 0;
    for (size_t j = 0; j < k; ++j) {
      gt_count += counts[c * k + j];
      pred_count += counts[j * k + c];
    }
    if (gt_count == 0) continue;  // class absent from ground truth
    const int64_t uni = gt_count + pred_count - tp;
    sum += static_cast<double>(tp) / static_cast<double>(uni);
    ++present;
  }
  return sum / static_cast<double>(present);
}

double miou(const IntTensor& pred, const IntTensor& gt, int num_classes, int ignore_index) {
  ConfusionMatrix cm(num_classes);
  cm.add(pred, gt, ignore_index);
  return cm.miou();
}

// ---------------------------------------------------------------------------
// root-mean-square error
// ---------------------------------------------------------------------------
void SquaredErrorAccumulator::add(const TensorF& pred, const TensorF& gt, const TensorF& mask) {
  require_same_shape(pred.shape(), gt.shape(), "rmse");
  require_mask(pred, mask, "rmse");
  const int64_t pixels = mask.numel();
  const int64_t channels = pred.numel() / pixels;
  for (int64_t p = 0; p < pixels; ++p) {
    if (!(mask.values()[static_cast<size_t>(p)] > 0.0f)) continue;
    for (int64_t c = 0; c < channels; ++c) {
      const size_t at = static_cast<size_t>(c * pixels + p);
      const double d =
          static_cast<double>(pred.values()[at]) - static_cast<double>(gt.values()[at]);
      sum_sq += d * d;
      ++count;
    }
  }
}

void SquaredErrorAccumulator::merge(const SquaredErrorAccumulator& other) {
  sum_sq += other.sum_sq;
  count += other.count;
}

double SquaredErrorAccumulator::rmse() const {
  if (count == 0) throw ValueError("rmse: empty evaluation (mask selected no pixels)");
  return std::sqrt(sum_sq / static_cast<double>(count));
}

double rmse(const TensorF& pred, const TensorF& gt, const TensorF& mask) {
  SquaredErrorAccumulator acc;
  acc.add(pred, gt, mask);
  return acc.rmse();
}

// ---------------------------------------------------------------------------
// mean angular error
// ---------------------------------------------------------------------------
void AngleErrorAccumulator::add(const TensorF& pred, const TensorF& gt, const TensorF& mask) {
  require_same_shape(pred.shape(), gt.shape(), "angle error");
  if (pred.ndim() != 3 || pred.dim(0) != 3)
    throw ShapeError("angle error: expected [3, H, W] fields, got " + shape_str(pred.shape()));
  require_mask(pred, mask, "angle error");
  const int64_t pixels = mask.numel();
  for (int64_t p = 0; p < pixels; ++p) {
    if (!(mask.values()[static_cast<size_t>(p)] > 0.0f)) continue;
    double px = pred.values()[static_cast<size_t>(p)];
    double py = pred.values()[static_cast<size_t>(pixels + p)];
    double pz = pred.values()[static_cast<size_t>(2 * pixels + p)];
    const double gx = gt.values()[static_cast<size_t>(p)];
    const double gy = gt.values()[static_cast<size_t>(pixels + p)];
    const double gz = gt.values()[static_cast<size_t>(2 * pixels + p)];
    const double norm = std::sqrt(px * px + py * py + pz * pz);
    double deg;
    if (norm < 1e-12) {
      deg = 90.0;  // a direction-free prediction is orthogonal on average
    } else {
      const double dot = std::clamp((px * gx + py * gy + pz * gz) / norm, -1.0, 1.0);
      deg = std::acos(dot) * 180.0 / kPi;
    }
    sum_deg += deg;
    ++count;
  }
}

void AngleErrorAccumulator::merge(const AngleErrorAccumulator& other) {
  sum_deg += other.sum_deg;
  count += other.count;
}

double AngleErrorAccumulator::mean_deg() const {
  if (count == 0) throw ValueError("angle error: empty evaluation (mask selected no pixels)");
  return sum_deg / static_cast<double>(count);
}

double mean_angle_error(const TensorF& pred, const TensorF& gt, const TensorF& mask) {
  AngleErrorAccumulator acc;
  acc.add(pred, gt, mask);
  return acc.mean_deg();
}

// ---------------------------------------------------------------------------
// thresholded F scores
// ---------------------------------------------------------------------------
namespace {
double f_measure(double precision, double recall) {
  const double s = precision + recall;
  return s > 0.0 ? 2.0 * precision * recall / s : 0.0;
}

// fraction with the vacuous case counting as perfect: a threshold that
// selects nothing has made no mistakes
double safe_ratio(int64_t hits, int64_t total) {
  return total > 0 ? static_cast<double>(hits) / static_cast<double>(total) : 1.0;
}
}  // namespace

void BinaryFAccumulator::add(const TensorF& probs, const TensorF& gt) {
  require_same_shape(probs.shape(), gt.shape(), "max-F");
  for (int i = 0; i < kThresholdSteps; ++i) {
    const double t = threshold_at(i);
    for (int64_t p = 0; p < probs.numel(); ++p) {
      const bool pos = static_cast<double>(probs.values()[static_cast<size_t>(p)]) >= t;
      const bool truth = gt.values()[static_cast<size_t>(p)] > 0.5f;
      if (pos && truth)
        tp[static_cast<size_t>(i)]++;
      else if (pos)
        fp[static_cast<size_t>(i)]++;
      else if (truth)
        fn[static_cast<size_t>(i)]++;
    }
  }
}

void BinaryFAccumulator::merge(const BinaryFAccumulator& other) {
  for (size_t i = 0; i < tp.size(); ++i) {
    tp[i] += other.tp[i];
    fp[i] += other.fp[i];
    fn[i] += other.fn[i];
  }
}

double BinaryFAccumulator::max_f() const {
  double best = 0.0;
  for (size_t i = 0; i < tp.size(); ++i) {
    const double precision = safe_ratio(tp[i], tp[i] + fp[i]);
    const double recall = safe_ratio(tp[i], tp[i] + fn[i]);
    best = std::max(best, f_measure(precision, recall));
  }
  return best;
}

double max_f(const std::vector<TensorF>& probs, const std::vector<TensorF>& gt) {
  if (probs.size() != gt.size()) throw ShapeError("max-F: prediction/target count mismatch");
  BinaryFAccumulator acc;
  for (size_t s = 0; s < probs.size(); ++s) acc.add(probs[s], gt[s]);
  return acc.max_f();
}

EdgeFAccumulator::EdgeFAccumulator(int r) : radius(r) {
  if (r < 0) throw ValueError("edge F: tolerance radius must be non-negative");
}

void EdgeFAccumulator::add(const TensorF& probs, const TensorF& gt) {
  require_same_shape(probs.shape(), gt.shape(), "edge F");
  if (probs.ndim() != 2) throw ShapeError("edge F: expected [H, W] maps");
  const int h = probs.dim(0), w = probs.dim(1);
  // tolerant matching: dilate the truth for judging predictions, and take a
  // neighborhood maximum of the probabilities for judging the truth
  std::vector<uint8_t> gt_near(static_cast<size_t>(h * w), 0);
  std::vector<float> prob_near(static_cast<size_t>(h * w), 0.0f);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      uint8_t near = 0;
      float best = 0.0f;
      for (int dy = -radius; dy <= radius; ++dy)
        for (int dx = -radius; dx <= radius; ++dx) {
          const int yy = y + dy, xx = x + dx;
          if (yy < 0 || yy >= h || xx < 0 || xx >= w) continue;
          if (gt.values()[static_cast<size_t>(yy * w + xx)] > 0.5f) near = 1;
          best = std::max(best, probs.values()[static_cast<size_t>(yy * w + xx)]);
        }
      gt_near[static_cast<size_t>(y * w + x)] = near;
      prob_near[static_cast<size_t>(y * w + x)] = best;
    }
  for (int64_t p = 0; p < gt.numel(); ++p)
    if (gt.values()[static_cast<size_t>(p)] > 0.5f) ++gt_total;
  for (int i = 0; i < kThresholdSteps; ++i) {
    const double t = threshold_at(i);
    for (int64_t p = 0; p < probs.numel(); ++p) {
      if (static_cast<double>(probs.values()[static_cast<size_t>(p)]) >= t) {
        pred_total[static_cast<size_t>(i)]++;
        if (gt_near[static_cast<size_t>(p)]) pred_matched[static_cast<size_t>(i)]++;
      }
      if (gt.values()[static_cast<size_t>(p)] > 0.5f &&
          static_cast<double>(prob_near[static_cast<size_t>(p)]) >= t)
        gt_matched[static_cast<size_t>(i)]++;
    }
  }
}

void EdgeFAccumulator::merge(const EdgeFAccumulator& other) {
  if (other.radius != radius) throw ValueError("edge F: cannot merge different radii");
  for (size_t i = 0; i < pred_total.size(); ++i) {
    pred_total[i] += other.pred_total[i];
    pred_matched[i] += other.pred_matched[i];
    gt_matched[i] += other.gt_matched[i];
  }
  gt_total += other.gt_total;
}

double EdgeFAccumulator::ods_f() const {
  double best = 0.0;
  for (size_t i = 0; i < pred_total.size(); ++i) {
    const double precision = safe_ratio(pred_matched[i], pred_total[i]);
    const double recall = safe_ratio(gt_matched[i], gt_total);
    best = std::max(best, f_measure(precision, recall));
  }
  return best;
}

double ods_f(const std::vector<TensorF>& probs, const std::vector<TensorF>& gt, int radius) {
  if (probs.size() != gt.size()) throw ShapeError("edge F: prediction/target count mismatch");
  EdgeFAccumulator acc(radius);
  for (size_t s = 0; s < probs.size(); ++s) acc.add(probs[s], gt[s]);
  return acc.ods_f();
}

// ---------------------------------------------------------------------------
// comparison arithmetic
// ---------------------------------------------------------------------------
double relative_gain(double measured, double reference, bool lower_is_better) {
  if (reference == 0.0) throw ValueError("relative gain: zero reference");
  const double sign = lower_is_better ? -1.0 : 1.0;
  return sign * (measured - reference) / reference * 100.0;
}

double delta_mtl(const std::vector<double>& gains) {
  if (gains.empty()) throw ValueError("average gain: no per-task gains");
  double sum = 0.0;
  for (double g : gains) sum += g;
  return sum / static_cast<double>(gains.size());
}

// ---------------------------------------------------------------------------
// report
// ---------------------------------------------------------------------------
void MetricsReport::compute_gains() {
  average_gain.reset();
  std::vector<double> gains;
  bool complete = true;
  for (auto& t : tasks) {
    t.gain.reset();
    if (t.reference.has_value()) {
      t.gain = relative_gain(t.value, *t.reference, t.lower_is_better);
      gains.push_back(*t.gain);
    } else {
      complete = false;
    }
  }
  if (complete && !tasks.empty()) average_gain = delta_mtl(gains);
}

namespace {
std::string fmt(const char* spec, double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), spec, v);
  return buf;
}
}  // namespace

std::string MetricsReport::to_table() const {
  std::string out = "task        metric   value      ref        gain%\n";
  for (const auto& t : tasks) {
    char line[160];
    std::snprintf(line, sizeof(line), "%-11s %-8s %-10s %-10s %s\n", t.name.c_str(),
                  t.metric_name.c_str(), fmt("%.4f", t.value).c_str(),
                  t.reference ? fmt("%.4f", *t.reference).c_str() : "-",
                  t.gain ? fmt("%+.2f", *t.gain).c_str() : "-");
    out += line;
  }
  if (average_gain) out += "average gain% " + fmt("%+.2f", *average_gain) + "\n";
  out += "samples " + std::to_string(samples) + "\n";
  return out;
}

std::string MetricsReport::to_kv() const {
  std::string out;
  for (const auto& t : tasks) {
    out += t.name + "." + t.metric_name + "=" + fmt("%.6g", t.value) + "\n";
    if (t.reference) out += t.name + ".ref=" + fmt("%.6g", *t.reference) + "\n";
    if (t.gain) out += t.name + ".gain=" + fmt("%.6g", *t.gain) + "\n";
  }
  if (average_gain) out += "average_gain=" + fmt("%.6g", *average_gain) + "\n";
  out += "samples=" + std::to_string(samples) + "\n";
  return out;
}

}  // namespace bridgenet
