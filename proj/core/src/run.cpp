#include "bridgenet/run.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <numeric>
#include <ostream>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

namespace bridgenet {

// ---------------------------------------------------------------------------
// run configuration
// ---------------------------------------------------------------------------
namespace {

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

long long parse_ll(const std::string& key, const std::string& value) {
  try {
    size_t used = 0;
    const long long v = std::stoll(value, &used);
    if (used != value.size()) throw std::invalid_argument("trailing characters");
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "': expected an integer, got '" + value + "'");
  }
}

int parse_int(const std::string& key, const std::string& value) {
  return static_cast<int>(parse_ll(key, value));
}

double parse_double(const std::string& key, const std::string& value) {
  try {
    size_t used = 0;
    const double v = std::stod(value, &used);
    if (used != value.size()) throw std::invalid_argument("trailing characters");
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "': expected a number, got '" + value + "'");
  }
}

std::vector<std::string> split_list(const std::string& value) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream ss(value);
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::vector<int> parse_int_list(const std::string& key, const std::string& value) {
  std::vector<int> out;
  for (const std::string& item : split_list(value)) out.push_back(parse_int(key, item));
  if (out.empty()) throw ConfigError("config key '" + key + "': expected a comma list");
  return out;
}

std::string join_ints(const std::vector<int>& v) {
  std::string out;
  for (size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + std::to_string(v[i]);
  return out;
}

std::string join_names(const std::vector<std::string>& v) {
  std::string out;
  for (size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + v[i];
  return out;
}

using Setter = std::function<void(RunConfig&, const std::string&, const std::string&)>;

const std::unordered_map<std::string, Setter>& config_setters() {
  static const std::unordered_map<std::string, Setter> table = {
      {"scene.image", [](RunConfig& c, const std::string& k, const std::string& v) { c.scene.image = parse_int(k, v); }},
      {"scene.min_shapes", [](RunConfig& c, const std::string& k, const std::string& v) { c.scene.min_shapes = parse_int(k, v); }},
      {"scene.max_shapes", [](RunConfig& c, const std::string& k, const std::string& v) { c.scene.max_shapes = parse_int(k, v); }},
      {"scene.num_classes", [](RunConfig& c, const std::string& k, const std::string& v) { c.scene.num_classes = parse_int(k, v); }},
      {"scene.depth_near", [](RunConfig& c, const std::string& k, const std::string& v) { c.scene.depth_near = parse_double(k, v); }},
      {"scene.depth_far", [](RunConfig& c, const std::string& k, const std::string& v) { c.scene.depth_far = parse_double(k, v); }},
      {"scene.noise", [](RunConfig& c, const std::string& k, const std::string& v) { c.scene.noise = parse_double(k, v); }},
      {"scene.seed", [](RunConfig& c, const std::string& k, const std::string& v) { c.scene.seed = static_cast<uint64_t>(parse_ll(k, v)); }},
      {"data.n_train", [](RunConfig& c, const std::string& k, const std::string& v) { c.n_train = parse_int(k, v); }},
      {"data.n_val", [](RunConfig& c, const std::string& k, const std::string& v) { c.n_val = parse_int(k, v); }},
      {"model.channels", [](RunConfig& c, const std::string& k, const std::string& v) { c.channels = parse_int(k, v); }},
      {"model.heads", [](RunConfig& c, const std::string& k, const std::string& v) { c.heads = parse_int(k, v); }},
      {"model.tfr_depth", [](RunConfig& c, const std::string& k, const std::string& v) { c.tfr_depth = parse_int(k, v); }},
      {"model.query_downsample", [](RunConfig& c, const std::string& k, const std::string& v) { c.query_downsample = parse_int(k, v); }},
      {"model.strides", [](RunConfig& c, const std::string& k, const std::string& v) { c.strides = parse_int_list(k, v); }},
      {"model.kv_downsample", [](RunConfig& c, const std::string& k, const std::string& v) { c.kv_downsample = parse_int_list(k, v); }},
      {"model.tasks", [](RunConfig& c, const std::string&, const std::string& v) { c.tasks = split_list(v); }},
      {"optim.kind", [](RunConfig& c, const std::string&, const std::string& v) { c.optim.kind = optim_kind_from_string(v); }},
      {"optim.lr", [](RunConfig& c, const std::string& k, const std::string& v) { c.optim.lr = parse_double(k, v); }},
      {"optim.weight_decay", [](RunConfig& c, const std::string& k, const std::string& v) { c.optim.weight_decay = parse_double(k, v); }},
      {"optim.poly_power", [](RunConfig& c, const std::string& k, const std::string& v) { c.optim.poly_power = parse_double(k, v); }},
      {"optim.momentum", [](RunConfig& c, const std::string& k, const std::string& v) { c.optim.momentum = parse_double(k, v); }},
      {"optim.beta1", [](RunConfig& c, const std::string& k, const std::string& v) { c.optim.beta1 = parse_double(k, v); }},
      {"optim.beta2", [](RunConfig& c, const std::string& k, const std::string& v) { c.optim.beta2 = parse_double(k, v); }},
      {"train.iters", [](RunConfig& c, const std::string& k, const std::string& v) { c.iters = parse_int(k, v); }},
      {"train.eval_interval", [](RunConfig& c, const std::string& k, const std::string& v) { c.eval_interval = parse_int(k, v); }},
      {"train.batch_size", [](RunConfig& c, const std::string& k, const std::string& v) { c.batch_size = parse_int(k, v); }},
      {"out", [](RunConfig& c, const std::string&, const std::string& v) { c.out_dir = v; }},
      {"seed", [](RunConfig& c, const std::string& k, const std::string& v) { c.seed = static_cast<uint64_t>(parse_ll(k, v)); }},
  };
  return table;
}

}  // namespace

RunConfig RunConfig::from_text(const std::string& text) {
  RunConfig cfg;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(line_no) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    const auto& table = config_setters();
    auto it = table.find(key);
    if (it == table.end()) throw ConfigError("unknown config key '" + key + "'");
    it->second(cfg, key, value);
  }
  return cfg;
}

RunConfig RunConfig::from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file: " + path);
  std::ostringstream text;
  text << in.rdbuf();
  return from_text(text.str());
}

std::string RunConfig::to_text() const {
  char buf[128];
  auto num = [&](double v) {
    std::snprintf(buf, sizeof buf, "%g", v);
    return std::string(buf);
  };
  std::string s;
  s += "# synthetic scene\n";
  s += "scene.image = " + std::to_string(scene.image) + "          # square input size\n";
  s += "scene.min_shapes = " + std::to_string(scene.min_shapes) + "      # fewest shapes per scene\n";
  s += "scene.max_shapes = " + std::to_string(scene.max_shapes) + "      # most shapes per scene\n";
  s += "scene.num_classes = " + std::to_string(scene.num_classes) + "     # background + shape classes\n";
  s += "scene.depth_near = " + num(scene.depth_near) + "    # closest surface depth\n";
  s += "scene.depth_far = " + num(scene.depth_far) + "       # farthest surface depth\n";
  s += "scene.noise = " + num(scene.noise) + "        # image noise amplitude\n";
  s += "scene.seed = " + std::to_string(scene.seed) + "           # dataset base seed\n";
  s += "# dataset\n";
  s += "data.n_train = " + std::to_string(n_train) + "        # training samples\n";
  s += "data.n_val = " + std::to_string(n_val) + "           # validation samples\n";
  s += "# model\n";
  s += "model.channels = " + std::to_string(channels) + "      # shared feature width\n";
  s += "model.heads = " + std::to_string(heads) + "          # attention heads\n";
  s += "model.tfr_depth = " + std::to_string(tfr_depth) + "       # refiner layers (2 base, 4 large, 6 huge)\n";
  s += "model.query_downsample = " + std::to_string(query_downsample) + " # query pooling inside attention\n";
  s += "model.strides = " + join_ints(strides) + "    # pyramid strides, finest first\n";
  s += "model.kv_downsample = " + join_ints(kv_downsample) + " # key/value pooling per scale\n";
  s += "model.tasks = " + join_names(tasks) + " # any subset of seg,depth,normals,edges\n";
  s += "# optimizer\n";
  s += "optim.kind = " + optim_kind_name(optim.kind) + "       # sgd | adam | adamw\n";
  s += "optim.lr = " + num(optim.lr) + "          # base learning rate\n";
  s += "optim.weight_decay = " + num(optim.weight_decay) + "\n";
  s += "optim.poly_power = " + num(optim.poly_power) + "    # lr = base * (1 - t/T)^p\n";
  s += "optim.momentum = " + num(optim.momentum) + "      # sgd only\n";
  s += "optim.beta1 = " + num(optim.beta1) + "\n";
  s += "optim.beta2 = " + num(optim.beta2) + "\n";
  s += "# training\n";
  s += "train.iters = " + std::to_string(iters) + "        # total iterations (also the lr horizon)\n";
  s += "train.eval_interval = " + std::to_string(eval_interval) + " # checkpoint cadence\n";
  s += "train.batch_size = " + std::to_string(batch_size) + "\n";
  s += "# run\n";
  s += "out = " + out_dir + "          # output directory\n";
  s += "seed = " + std::to_string(seed) + "             # init + batch-order seed\n";
  return s;
}

ModelConfig RunConfig::model_config() const {
  ModelConfig mc;
  mc.image_h = mc.image_w = scene.image;
  mc.strides = strides;
  mc.channels = channels;
  mc.heads = heads;
  mc.tfr_depth = tfr_depth;
  mc.query_downsample = query_downsample;
  mc.kv_downsample = kv_downsample;
  for (const std::string& name : tasks) {
    if (name == "seg")
      mc.tasks.push_back(segmentation_task(scene.num_classes));
    else if (name == "depth")
      mc.tasks.push_back(depth_task());
    else if (name == "normals")
      mc.tasks.push_back(normals_task());
    else if (name == "edges")
      mc.tasks.push_back(edges_task());
    else
      throw ConfigError("unknown task '" + name + "' (expected seg, depth, normals, edges)");
  }
  return mc;
}

// ---------------------------------------------------------------------------
// variants
// ---------------------------------------------------------------------------
ModelConfig apply_variant(const RunConfig& cfg, const VariantSpec& variant) {
  ModelConfig mc = cfg.model_config();
  if (variant.tfr_size == "base")
    mc.tfr_depth = 2;
  else if (variant.tfr_size == "large")
    mc.tfr_depth = 4;
  else if (variant.tfr_size == "huge")
    mc.tfr_depth = 6;
  else
    throw ConfigError("unknown tfr size '" + variant.tfr_size +
                      "' (expected base, large, or huge)");

  if (variant.variant == "stl") {
    if (variant.stl_task.empty())
      throw ConfigError("stl variant needs the task name to train");
    std::vector<TaskSpec> kept;
    for (const TaskSpec& t : mc.tasks)
      if (t.name == variant.stl_task) kept.push_back(t);
    if (kept.empty())
      throw ConfigError("stl task '" + variant.stl_task + "' is not in the configured task list");
    mc.tasks = kept;
    mc.use_tpp = mc.use_bfe = mc.use_tfr = false;
  } else if (variant.variant == "mtl_baseline") {
    mc.use_tpp = mc.use_bfe = mc.use_tfr = false;
  } else if (variant.variant == "bridgenet") {
    mc.use_tpp = mc.use_bfe = mc.use_tfr = true;
    for (const std::string& a : variant.ablate) {
      if (a == "tpp")
        mc.use_tpp = false;
      else if (a == "bfe")
        mc.use_bfe = false;
      else if (a == "tfr")
        mc.use_tfr = false;
      else
        throw ConfigError("unknown ablation '" + a + "' (expected tpp, bfe, or tfr)");
    }
  } else {
    throw ConfigError("unknown variant '" + variant.variant +
                      "' (expected stl, mtl_baseline, or bridgenet)");
  }
  return mc;
}

// ---------------------------------------------------------------------------
// training
// ---------------------------------------------------------------------------
std::vector<TaskTarget> targets_for(const ModelConfig& cfg, const Sample& sample) {
  const int h = sample.seg.dim(0), w = sample.seg.dim(1);
  std::vector<TaskTarget> targets;
  for (const TaskSpec& spec : cfg.tasks) {
    TaskTarget t;
    switch (spec.kind) {
      case TaskKind::categorical:
        t.labels = sample.seg;
        t.mask = TensorF(Shape{h, w}, 1.0f);
        break;
      case TaskKind::regression:
        t.values = sample.depth;
        t.mask = sample.depth_mask;
        break;
      case TaskKind::unit_vector:
        t.values = sample.normals;
        t.mask = sample.normals_mask;
        break;
      case TaskKind::binary:
        t.values = sample.edges;
        t.mask = TensorF(Shape{h, w}, 1.0f);
        break;
    }
    targets.push_back(std::move(t));
  }
  return targets;
}

TrainResult train_model(BridgeNet& net, Optimizer& opt, const RunConfig& cfg,
                        const TrainOptions& opts, const std::vector<Sample>& train_set,
                        std::ostream& log) {
  if (train_set.empty()) throw ConfigError("train: the training set is empty");
  if (cfg.iters < 1) throw ConfigError("train: iters must be at least 1");
  if (cfg.batch_size < 1) throw ConfigError("train: batch_size must be at least 1");
  if (opts.log_every < 1) throw ConfigError("train: log_every must be at least 1");

  const ModelConfig& mc = net.cfg;
  const int nt = mc.num_tasks();
  std::vector<std::vector<TaskTarget>> targets;
  targets.reserve(train_set.size());
  for (const Sample& s : train_set) targets.push_back(targets_for(mc, s));

  OptimConfig sched = cfg.optim;
  sched.total_iters = cfg.iters;

  log << "# iter\tlr\ttotal";
  for (const TaskSpec& t : mc.tasks) log << '\t' << t.name;
  log << '\n';

  const int n = static_cast<int>(train_set.size());
  const int bs = std::min(cfg.batch_size, n);
  Rng order_rng(cfg.seed * 0x9E3779B97F4A7C15ull + 0x7F4A7C15ull);
  std::vector<int> order(static_cast<size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  size_t cursor = order.size();  // forces a shuffle before the first draw
  auto next_index = [&]() {
    if (cursor >= order.size()) {
      for (int i = n - 1; i > 0; --i)
        std::swap(order[static_cast<size_t>(i)],
                  order[static_cast<size_t>(order_rng.uniform_int(i + 1))]);
      cursor = 0;
    }
    return order[cursor++];
  };

  char buf[64];
  auto fmt = [&](double v) {
    std::snprintf(buf, sizeof buf, "%.6g", v);
    return std::string(buf);
  };

  TrainResult res;
  for (int it = 0; it < cfg.iters; ++it) {
    const double lr = poly_lr(it, sched);
    opt.zero_grad();
    double total = 0.0;
    std::vector<double> per_task(static_cast<size_t>(nt), 0.0);
    for (int b = 0; b < bs; ++b) {
      const int idx = opts.overfit_one_batch ? b % n : next_index();
      GradTape tape;
      ModelOutputs out = net.forward(train_set[static_cast<size_t>(idx)].image);
      LossBreakdown lb = compute_losses(mc, out, targets[static_cast<size_t>(idx)]);
      tape.backward(scale(lb.total, 1.0f / static_cast<float>(bs)));
      total += static_cast<double>(lb.total.item()) / bs;
      for (int j = 0; j < nt; ++j)
        per_task[static_cast<size_t>(j)] += static_cast<double>(lb.final_terms[static_cast<size_t>(j)]) / bs;
    }

    if (it == 0) res.first_loss = static_cast<float>(total);
    res.final_loss = static_cast<float>(total);
    const bool last = it == cfg.iters - 1;
    if (!std::isfinite(total)) {
      res.ok = false;
      res.failed_iter = it;
      log << it << '\t' << fmt(lr) << '\t' << fmt(total) << "\t# non-finite loss, stopping\n";
      return res;
    }
    if (it % opts.log_every == 0 || last) {
      log << it << '\t' << fmt(lr) << '\t' << fmt(total);
      for (double v : per_task) log << '\t' << fmt(v);
      log << '\n';
    }
    opt.step(lr);
    if (opts.checkpoint_interval > 0 && opts.on_checkpoint && !last &&
        (it + 1) % opts.checkpoint_interval == 0)
      opts.on_checkpoint(it + 1);
  }
  return res;
}

// ---------------------------------------------------------------------------
// checkpoints
// ---------------------------------------------------------------------------
void save_checkpoint(const std::string& path, const BridgeNet& net, const Optimizer* opt,
                     int64_t iter) {
  ParamList<float> params;
  net.collect_params("net", params);
  std::vector<ArchiveEntry> entries;
  for (const auto& p : params) entries.push_back({"param." + p.name, p.tensor});
  if (opt)
    for (const auto& s : opt->state_tensors()) entries.push_back({s.name, s.tensor});
  entries.push_back({"meta.iter", TensorF(Shape{1}, static_cast<float>(iter))});
  save_archive(path, entries);
}

int64_t load_checkpoint(const std::string& path, BridgeNet& net, Optimizer* opt) {
  ParamList<float> params;
  net.collect_params("net", params);
  std::unordered_map<std::string, TensorF*> by_name;
  for (auto& p : params) by_name["param." + p.name] = &p.tensor;

  std::vector<NamedParam<float>> optim_state;
  std::optional<int64_t> iter;
  size_t restored = 0;
  for (ArchiveEntry& e : load_archive(path)) {
    if (e.name.rfind("param.", 0) == 0) {
      auto it = by_name.find(e.name);
      if (it == by_name.end())
        throw ConfigError("checkpoint/config mismatch: unexpected parameter '" + e.name + "'");
      if (!std::holds_alternative<TensorF>(e.value))
        throw ConfigError("checkpoint/config mismatch: '" + e.name + "' is not a float tensor");
      const TensorF& src = std::get<TensorF>(e.value);
      if (src.shape() != it->second->shape())
        throw ConfigError("checkpoint/config mismatch: shape of '" + e.name + "' differs");
      it->second->values() = src.values();
      ++restored;
    } else if (e.name.rfind("optim.", 0) == 0) {
      if (!std::holds_alternative<TensorF>(e.value))
        throw ConfigError("checkpoint: optimizer entry '" + e.name + "' is not a float tensor");
      optim_state.push_back({e.name, std::get<TensorF>(e.value)});
    } else if (e.name == "meta.iter") {
      if (!std::holds_alternative<TensorF>(e.value))
        throw ConfigError("checkpoint: meta.iter is not a float tensor");
      iter = static_cast<int64_t>(std::get<TensorF>(e.value).values().at(0));
    } else {
      throw ConfigError("checkpoint: unexpected entry '" + e.name + "'");
    }
  }
  if (restored != params.size())
    throw ConfigError("checkpoint/config mismatch: restored " + std::to_string(restored) +
                      " of " + std::to_string(params.size()) + " parameters");
  if (!iter) throw ConfigError("checkpoint: missing meta.iter");
  if (opt) {
    if (optim_state.empty()) throw ConfigError("checkpoint: no optimizer state to resume from");
    opt->load_state(optim_state);
  }
  return *iter;
}

// ---------------------------------------------------------------------------
// evaluation
// ---------------------------------------------------------------------------
std::string task_metric_name(TaskMetric metric) {
  switch (metric) {
    case TaskMetric::miou: return "miou";
    case TaskMetric::rmse: return "rmse";
    case TaskMetric::mean_angle: return "mErr";
    case TaskMetric::max_f: return "maxF";
    case TaskMetric::ods_f: return "odsF";
  }
  throw ValueError("task_metric_name: bad enum value");
}

namespace {

IntTensor argmax_channels(const TensorF& pred) {
  const int k = pred.dim(0), h = pred.dim(1), w = pred.dim(2);
  IntTensor out(Shape{h, w}, 0);
  const auto& v = pred.values();
  for (int p = 0; p < h * w; ++p) {
    int best = 0;
    float best_v = v[static_cast<size_t>(p)];
    for (int c = 1; c < k; ++c) {
      const float cv = v[static_cast<size_t>(c * h * w + p)];
      if (cv > best_v) {
        best_v = cv;
        best = c;
      }
    }
    out.values()[static_cast<size_t>(p)] = best;
  }
  return out;
}

TensorF sigmoid_map(const TensorF& logits) {
  const int h = logits.dim(1), w = logits.dim(2);
  TensorF out(Shape{h, w}, 0.0f);
  for (int64_t p = 0; p < out.numel(); ++p) {
    const double z = logits.values()[static_cast<size_t>(p)];
    out.values()[static_cast<size_t>(p)] = static_cast<float>(1.0 / (1.0 + std::exp(-z)));
  }
  return out;
}

}  // namespace

MetricsReport evaluate_model(const BridgeNet& net, const std::vector<Sample>& samples,
                             const std::map<std::string, double>* references) {
  if (samples.empty()) throw ValueError("eval: no samples");
  NoGradGuard guard;
  const ModelConfig& mc = net.cfg;
  const int nt = mc.num_tasks();

  std::vector<ConfusionMatrix> cms;
  std::vector<SquaredErrorAccumulator> sqs(static_cast<size_t>(nt));
  std::vector<AngleErrorAccumulator> angs(static_cast<size_t>(nt));
  std::vector<BinaryFAccumulator> bfs(static_cast<size_t>(nt));
  std::vector<EdgeFAccumulator> efs(static_cast<size_t>(nt), EdgeFAccumulator(1));
  for (const TaskSpec& t : mc.tasks)
    cms.emplace_back(t.kind == TaskKind::categorical ? t.channels : 1);

  for (const Sample& s : samples) {
    ModelOutputs out = net.forward(s.image);
    for (int j = 0; j < nt; ++j) {
      const TaskSpec& spec = mc.tasks[static_cast<size_t>(j)];
      const TensorF& pred = out.finals[static_cast<size_t>(j)];
      switch (spec.metric) {
        case TaskMetric::miou:
          cms[static_cast<size_t>(j)].add(argmax_channels(pred), s.seg);
          break;
        case TaskMetric::rmse:
          sqs[static_cast<size_t>(j)].add(pred, s.depth, s.depth_mask);
          break;
        case TaskMetric::mean_angle:
          angs[static_cast<size_t>(j)].add(pred, s.normals, s.normals_mask);
          break;
        case TaskMetric::max_f:
          bfs[static_cast<size_t>(j)].add(sigmoid_map(pred), s.edges);
          break;
        case TaskMetric::ods_f:
          efs[static_cast<size_t>(j)].add(sigmoid_map(pred), s.edges);
          break;
      }
    }
  }

  MetricsReport report;
  report.samples = static_cast<int64_t>(samples.size());
  for (int j = 0; j < nt; ++j) {
    const TaskSpec& spec = mc.tasks[static_cast<size_t>(j)];
    TaskResult r;
    r.name = spec.name;
    r.metric_name = task_metric_name(spec.metric);
    r.lower_is_better = spec.lower_is_better;
    switch (spec.metric) {
      case TaskMetric::miou: r.value = cms[static_cast<size_t>(j)].miou(); break;
      case TaskMetric::rmse: r.value = sqs[static_cast<size_t>(j)].rmse(); break;
      case TaskMetric::mean_angle: r.value = angs[static_cast<size_t>(j)].mean_deg(); break;
      case TaskMetric::max_f: r.value = bfs[static_cast<size_t>(j)].max_f(); break;
      case TaskMetric::ods_f: r.value = efs[static_cast<size_t>(j)].ods_f(); break;
    }
    if (references) {
      auto it = references->find(spec.name);
      if (it != references->end()) r.reference = it->second;
    }
    report.tasks.push_back(std::move(r));
  }
  report.compute_gains();
  return report;
}

std::map<std::string, double> parse_kv_report(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open report file: " + path);
  std::map<std::string, double> out;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    line = trim(line);
    if (line.empty()) continue;
    const size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw FormatError("report line " + std::to_string(line_no) + ": expected key=value");
    const std::string key = line.substr(0, eq);
    if (key == "average_gain" || key == "samples") continue;
    const size_t dot = key.find('.');
    if (dot == std::string::npos)
      throw FormatError("report line " + std::to_string(line_no) + ": unrecognized key '" + key +
                        "'");
    const std::string suffix = key.substr(dot + 1);
    if (suffix == "ref" || suffix == "gain") continue;
    out[key.substr(0, dot)] = parse_double(key, line.substr(eq + 1));
  }
  return out;
}

std::vector<Sample> load_split(const std::string& manifest_path, const std::string& split) {
  std::vector<Sample> out;
  for (const ManifestRow& row : read_manifest(manifest_path))
    if (row.split == split) out.push_back(sample_from_entries(load_archive(row.path)));
  if (out.empty())
    throw ConfigError("dataset has no '" + split + "' samples in " + manifest_path);
  return out;
}

// ---------------------------------------------------------------------------
// shipped benchmark fixtures
// ---------------------------------------------------------------------------
const std::vector<double>& fixture_reference_metrics() {
  static const std::vector<double> ref{50.95, 0.5698, 19.08, 78.28};
  return ref;
}

const std::vector<bool>& fixture_lower_is_better() {
  static const std::vector<bool> lower{false, true, true, false};
  return lower;
}

const std::vector<FixtureRow>& fixture_rows() {
  static const std::vector<FixtureRow> rows{
      {"shared baseline", {48.30, 0.5605, 19.08, 77.42}, -1.17},
      {"+ bridge features", {50.30, 0.5367, 19.00, 77.40}, 0.96},
      {"+ pattern propagation", {50.22, 0.5312, 18.97, 77.68}, 1.29},
      {"+ task refinement (huge)", {51.14, 0.5186, 18.92, 77.98}, 2.45},
  };
  return rows;
}

std::string format_fixture_table() {
  const auto& ref = fixture_reference_metrics();
  const auto& lower = fixture_lower_is_better();
  char buf[160];
  std::string out;
  out += "variant                    miou^   rmse_v  mErr_v  odsF^   delta%  shipped\n";
  std::snprintf(buf, sizeof buf, "%-26s %-7.2f %-7.4f %-7.2f %-7.2f %-7s %s\n",
                "single-task reference", ref[0], ref[1], ref[2], ref[3], "-", "-");
  out += buf;
  for (const FixtureRow& row : fixture_rows()) {
    std::vector<double> gains;
    for (size_t j = 0; j < ref.size(); ++j)
      gains.push_back(relative_gain(row.metrics[j], ref[j], lower[j]));
    const double delta = delta_mtl(gains);
    std::snprintf(buf, sizeof buf, "%-26s %-7.2f %-7.4f %-7.2f %-7.2f %+-7.2f %+.2f\n",
                  row.label.c_str(), row.metrics[0], row.metrics[1], row.metrics[2],
                  row.metrics[3], delta, row.expected_delta);
    out += buf;
  }
  return out;
}

}  // namespace bridgenet
