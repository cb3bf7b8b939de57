// Run orchestration: the key=value run configuration, model-variant
// selection (single-task / shared baseline / full network with ablations),
// the deterministic training loop, checkpoint archives, and evaluation into
// a MetricsReport.
#pragma once

#include <functional>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "bridgenet/data.hpp"
#include "bridgenet/metrics.hpp"
#include "bridgenet/model.hpp"
#include "bridgenet/optim.hpp"

namespace bridgenet {

// ---------------------------------------------------------------------------
// run configuration
// ---------------------------------------------------------------------------
// UTF-8 lines of `key = value`; `#` starts a comment; unknown keys are
// rejected by name. to_text() prints every key with its current value and a
// short description, so RunConfig{}.to_text() documents all defaults.
struct RunConfig {
  SceneConfig scene;     // scene.*  (scene.image also sets the model input)
  int n_train = 16;      // data.n_train
  int n_val = 4;         // data.n_val
  int channels = 32;     // model.*
  int heads = 2;
  int tfr_depth = 2;
  int query_downsample = 2;
  std::vector<int> strides{4, 8, 16};
  std::vector<int> kv_downsample{8, 4, 2};
  std::vector<std::string> tasks{"seg", "depth", "normals", "edges"};
  OptimConfig optim;     // optim.* (total_iters is driven by train.iters)
  int iters = 500;       // train.*
  int eval_interval = 100;
  int batch_size = 2;
  std::string out_dir = "runs/out";  // out
  uint64_t seed = 0;     // seed (init + batch order; scene.seed feeds data)

  static RunConfig from_text(const std::string& text);  // ConfigError names the key
  static RunConfig from_file(const std::string& path);  // IoError if unreadable
  std::string to_text() const;

  // ModelConfig with every flag on; apply_variant specializes it.
  ModelConfig model_config() const;
};

// ---------------------------------------------------------------------------
// variants
// ---------------------------------------------------------------------------
struct VariantSpec {
  std::string variant = "bridgenet";  // stl | mtl_baseline | bridgenet
  std::string tfr_size = "base";      // base | large | huge (refiner depth 2/4/6)
  std::vector<std::string> ablate;    // any of tpp, bfe, tfr
  std::string stl_task;               // task name for the stl variant
};

// stl: a single named task, all interaction blocks off. mtl_baseline: all
// tasks, all interaction blocks off. bridgenet: all tasks, blocks on minus
// the ablation list, refiner depth from tfr_size. Throws ConfigError on
// unknown names.
ModelConfig apply_variant(const RunConfig& cfg, const VariantSpec& variant);

// ---------------------------------------------------------------------------
// training
// ---------------------------------------------------------------------------
// Ground-truth targets for each configured task, in task order.
std::vector<TaskTarget> targets_for(const ModelConfig& cfg, const Sample& sample);

struct TrainOptions {
  bool overfit_one_batch = false;  // always feed the first batch
  int log_every = 10;              // a log line every N iterations (>= 1)
  // when both are set, on_checkpoint(completed_iters) fires after every
  // checkpoint_interval-th step except the last (the caller owns the final
  // save); the model and optimizer are consistent when it runs
  int checkpoint_interval = 0;
  std::function<void(int)> on_checkpoint;
};

struct TrainResult {
  bool ok = true;
  int failed_iter = -1;   // iteration whose loss went non-finite, if any
  float first_loss = 0.0f;
  float final_loss = 0.0f;
};

// Deterministic loop: batch order is a seeded shuffle per epoch, the
// schedule is poly_lr over cfg.iters, gradients average over the batch.
// Logs tab-separated `iter lr total <per-task final losses>` lines.
TrainResult train_model(BridgeNet& net, Optimizer& opt, const RunConfig& cfg,
                        const TrainOptions& opts, const std::vector<Sample>& train_set,
                        std::ostream& log);

// ---------------------------------------------------------------------------
// checkpoints (tensor archives: param.<name>, optim.*, meta.iter)
// ---------------------------------------------------------------------------
void save_checkpoint(const std::string& path, const BridgeNet& net, const Optimizer* opt,
                     int64_t iter);

// Restores parameters (and optimizer state when opt is given) by exact
// name/shape match; any missing or extra parameter is a ConfigError, i.e. the
// checkpoint belongs to a different configuration. Returns the stored
// iteration count.
int64_t load_checkpoint(const std::string& path, BridgeNet& net, Optimizer* opt);

// ---------------------------------------------------------------------------
// evaluation
// ---------------------------------------------------------------------------
std::string task_metric_name(TaskMetric metric);

// Runs the network over the samples without recording gradients and fills one
// TaskResult per task (miou / rmse / mErr / maxF / odsF by task metric).
// `references` maps task name -> single-task reference value; matched tasks
// get relative gains and, when every task has one, the mean gain.
MetricsReport evaluate_model(const BridgeNet& net, const std::vector<Sample>& samples,
                             const std::map<std::string, double>* references = nullptr);

// Reads a to_kv() report back into task name -> metric value (ref/gain/
// average/sample lines are ignored), for --stl-ref.
std::map<std::string, double> parse_kv_report(const std::string& path);

// Loads every sample of one split ("train" / "val") from a dataset manifest.
std::vector<Sample> load_split(const std::string& manifest_path, const std::string& split);

// ---------------------------------------------------------------------------
// shipped benchmark fixtures
// ---------------------------------------------------------------------------
// Reference rows for the gain arithmetic: a four-task single-task baseline
// (miou up, rmse down, mErr down, odsF up) and the staged variants measured
// against it. `expected_delta` is the shipped value the computed mean gain
// must reproduce within +/-0.01.
struct FixtureRow {
  std::string label;
  std::vector<double> metrics;
  double expected_delta;
};

const std::vector<double>& fixture_reference_metrics();
const std::vector<bool>& fixture_lower_is_better();
const std::vector<FixtureRow>& fixture_rows();

// Formatted table of the fixture rows with recomputed gains.
std::string format_fixture_table();

}  // namespace bridgenet
