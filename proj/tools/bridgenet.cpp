// Command-line driver: dataset generation, training of the three model
// variants (with ablations), evaluation into metric reports with optional
// single-task references, and finite-difference verification of every
// block's backward pass.
//
// Exit codes: 0 success, 1 runtime failure, 2 usage/config error.
// Every command is deterministic given config + seed.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "bridgenet/gradcheck.hpp"
#include "bridgenet/run.hpp"
#include "bridgenet/verify.hpp"

namespace fs = std::filesystem;
using namespace bridgenet;

namespace {

// ---------------------------------------------------------------------------
// shared plumbing
// ---------------------------------------------------------------------------
struct CommonArgs {
  std::string config;
  std::string out;
  int64_t seed = -1;  // <0: keep the config's seeds
};

void add_common(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("--config", args.config, "run configuration file (key = value lines)");
  cmd->add_option("--out", args.out, "output directory (overrides the config's `out`)");
  cmd->add_option("--seed", args.seed, "override both the run seed and the scene seed");
}

// A bad --config path is a usage error (exit 2), unlike I/O failures while a
// command is doing its work (exit 1).
RunConfig load_config(const CommonArgs& args) {
  RunConfig rc;
  if (!args.config.empty()) {
    try {
      rc = RunConfig::from_file(args.config);
    } catch (const IoError& e) {
      throw ConfigError(e.what());
    }
  }
  if (args.seed >= 0) {
    rc.seed = static_cast<uint64_t>(args.seed);
    rc.scene.seed = static_cast<uint64_t>(args.seed);
  }
  if (!args.out.empty()) rc.out_dir = args.out;
  return rc;
}

struct VariantArgs {
  VariantSpec spec;
  std::string task;  // stl only: restrict to one task
};

void add_variant(CLI::App* cmd, VariantArgs& args) {
  cmd->add_option("--variant", args.spec.variant, "model variant")
      ->check(CLI::IsMember({"stl", "mtl_baseline", "bridgenet"}))
      ->capture_default_str();
  cmd->add_option("--tfr", args.spec.tfr_size, "refiner size (depth 2/4/6)")
      ->check(CLI::IsMember({"base", "large", "huge"}))
      ->capture_default_str();
  cmd->add_option("--ablate", args.spec.ablate, "disable one block (repeatable)")
      ->check(CLI::IsMember({"tpp", "bfe", "tfr"}));
  cmd->add_option("--task", args.task, "restrict --variant stl to this task");
}

// duplicates every byte onto a second stream (live console + log file)
class TeeBuf : public std::streambuf {
 public:
  TeeBuf(std::streambuf* a, std::streambuf* b) : a_(a), b_(b) {}

 protected:
  int overflow(int c) override {
    if (c == EOF) return c;
    const int ra = a_->sputc(static_cast<char>(c));
    const int rb = b_->sputc(static_cast<char>(c));
    return ra == EOF || rb == EOF ? EOF : c;
  }
  int sync() override { return a_->pubsync() == 0 && b_->pubsync() == 0 ? 0 : -1; }

 private:
  std::streambuf* a_;
  std::streambuf* b_;
};

// Deterministic in-memory split, matching the seeds build_dataset writes to
// disk, so --data is optional for the toy configs.
std::vector<Sample> generate_split(const RunConfig& rc, const std::string& split) {
  const int count = split == "train" ? rc.n_train : rc.n_val;
  const uint64_t base = split == "train" ? rc.scene.seed : rc.scene.seed + 1000000;
  std::vector<Sample> out;
  out.reserve(static_cast<size_t>(count));
  for (int i = 0; i < count; ++i)
    out.push_back(generate_scene(rc.scene, base + static_cast<uint64_t>(i)));
  return out;
}

std::vector<Sample> obtain_split(const RunConfig& rc, const std::string& data,
                                 const std::string& split) {
  if (!data.empty()) return load_split(data, split);
  return generate_split(rc, split);
}

int64_t count_params(const BridgeNet& net) {
  ParamList<float> params;
  net.collect_params("net", params);
  return param_count(params);
}

void write_report(const RunConfig& rc, const std::string& filename, const MetricsReport& rep) {
  fs::create_directories(rc.out_dir);
  const fs::path path = fs::path(rc.out_dir) / filename;
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write report: " + path.string());
  f << rep.to_kv();
  std::cout << "report written to " << path.string() << "\n";
}

// ---------------------------------------------------------------------------
// gen-data
// ---------------------------------------------------------------------------
int cmd_gen_data(const RunConfig& rc) {
  const std::string manifest = build_dataset(rc.scene, rc.n_train, rc.n_val, rc.out_dir);
  std::cout << manifest << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------
struct TrainArgs {
  std::string data;     // dataset manifest; generated in memory when absent
  std::string stl_ref;  // optional reference report for gain columns
  int iters = -1;       // override train.iters
  int log_every = 10;
  bool overfit_one_batch = false;
};

// one training run: logs to <out>/<log_name> and the console, checkpoints at
// eval_interval (<ckpt_stem>_<iter>.btnr) plus a final <ckpt_stem>.btnr
TrainResult run_training(BridgeNet& net, Optimizer& opt, const RunConfig& rc,
                         const TrainArgs& targs, const std::vector<Sample>& train_set,
                         const std::string& log_name, const std::string& ckpt_stem) {
  fs::create_directories(rc.out_dir);
  const fs::path log_path = fs::path(rc.out_dir) / log_name;
  std::ofstream log_file(log_path, std::ios::binary);
  if (!log_file) throw IoError("cannot write log: " + log_path.string());
  TeeBuf tee(std::cout.rdbuf(), log_file.rdbuf());
  std::ostream log(&tee);
  log << "# params\t" << count_params(net) << "\n";

  TrainOptions opts;
  opts.overfit_one_batch = targs.overfit_one_batch;
  opts.log_every = targs.log_every;
  opts.checkpoint_interval = rc.eval_interval;
  opts.on_checkpoint = [&](int it) {
    const fs::path p = fs::path(rc.out_dir) / (ckpt_stem + "_" + std::to_string(it) + ".btnr");
    save_checkpoint(p.string(), net, &opt, it);
  };
  const TrainResult res = train_model(net, opt, rc, opts, train_set, log);
  if (!res.ok) return res;
  const fs::path final_path = fs::path(rc.out_dir) / (ckpt_stem + ".btnr");
  save_checkpoint(final_path.string(), net, &opt, rc.iters);
  std::cout << "checkpoint written to " << final_path.string() << "\n";
  return res;
}

int cmd_train(RunConfig rc, const VariantArgs& vargs, const TrainArgs& targs) {
  if (targs.iters > 0) rc.iters = targs.iters;
  const std::vector<Sample> train_set = obtain_split(rc, targs.data, "train");
  // with an on-disk dataset the val split may legitimately be absent
  std::vector<Sample> vals;
  if (targs.data.empty()) {
    vals = generate_split(rc, "val");
  } else {
    for (const ManifestRow& row : read_manifest(targs.data))
      if (row.split == "val") {
        vals = load_split(targs.data, "val");
        break;
      }
  }

  std::map<std::string, double> refs;
  if (!targs.stl_ref.empty()) refs = parse_kv_report(targs.stl_ref);

  if (vargs.spec.variant == "stl") {
    // one independent single-task model per task; their evaluations combine
    // into the single-task reference report
    std::vector<std::string> task_list =
        vargs.task.empty() ? rc.tasks : std::vector<std::string>{vargs.task};
    MetricsReport combined;
    combined.samples = static_cast<int64_t>(vals.size());
    for (const std::string& task : task_list) {
      VariantSpec spec = vargs.spec;
      spec.stl_task = task;
      const ModelConfig mc = apply_variant(rc, spec);
      Rng rng(rc.seed);
      BridgeNet net(mc, rng);
      ParamList<float> params;
      net.collect_params("net", params);
      Optimizer opt(rc.optim, params);
      std::cout << "== single-task run: " << task << " ==\n";
      const TrainResult res =
          run_training(net, opt, rc, targs, train_set, "stl_" + task + ".log", "stl_" + task);
      if (!res.ok) {
        std::cerr << "training diverged: non-finite loss at iteration " << res.failed_iter
                  << " (task " << task << ")\n";
        return 1;
      }
      if (!vals.empty()) {
        const MetricsReport rep = evaluate_model(net, vals);
        combined.tasks.push_back(rep.tasks.at(0));
      }
    }
    if (!vals.empty()) {
      std::cout << combined.to_table();
      write_report(rc, "stl_report.kv", combined);
    }
    return 0;
  }

  const ModelConfig mc = apply_variant(rc, vargs.spec);
  Rng rng(rc.seed);
  BridgeNet net(mc, rng);
  ParamList<float> params;
  net.collect_params("net", params);
  Optimizer opt(rc.optim, params);
  const TrainResult res = run_training(net, opt, rc, targs, train_set, "train.log", "checkpoint");
  if (!res.ok) {
    std::cerr << "training diverged: non-finite loss at iteration " << res.failed_iter << "\n";
    return 1;
  }
  if (!vals.empty()) {
    const MetricsReport rep = evaluate_model(net, vals, refs.empty() ? nullptr : &refs);
    std::cout << rep.to_table();
    write_report(rc, "report.kv", rep);
  }
  return 0;
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------
struct EvalArgs {
  std::string checkpoint;
  std::string data;
  std::string split = "val";
  std::string stl_ref;
  bool reference_table = false;
};

int cmd_eval(const RunConfig& rc, const VariantArgs& vargs, const EvalArgs& eargs) {
  if (eargs.reference_table) {
    std::cout << format_fixture_table();
    return 0;
  }
  if (eargs.checkpoint.empty())
    throw ConfigError("eval requires --checkpoint (or --reference-table)");

  VariantSpec spec = vargs.spec;
  if (spec.variant == "stl") spec.stl_task = vargs.task;
  const ModelConfig mc = apply_variant(rc, spec);
  Rng rng(rc.seed);
  BridgeNet net(mc, rng);
  try {
    const int64_t iter = load_checkpoint(eargs.checkpoint, net, nullptr);
    std::cout << "# checkpoint " << eargs.checkpoint << " @ iteration " << iter << "\n";
  } catch (const ConfigError& e) {
    // the checkpoint belongs to a different configuration: a runtime failure
    std::cerr << e.what() << "\n";
    return 1;
  }

  const std::vector<Sample> samples = obtain_split(rc, eargs.data, eargs.split);
  std::map<std::string, double> refs;
  if (!eargs.stl_ref.empty()) refs = parse_kv_report(eargs.stl_ref);
  const MetricsReport rep = evaluate_model(net, samples, refs.empty() ? nullptr : &refs);
  std::cout << rep.to_table();
  write_report(rc, "report.kv", rep);
  return 0;
}

// ---------------------------------------------------------------------------
// gradcheck
// ---------------------------------------------------------------------------
struct GradcheckArgs {
  std::string block = "all";
  bool inject_fault = false;
};

int cmd_gradcheck(const GradcheckArgs& gargs, uint64_t seed) {
  std::vector<std::string> failed;
  for (const auto& [name, fn] : verify_blocks()) {
    if (gargs.block != "all" && gargs.block != name) continue;
    const double err = fn(seed, gargs.inject_fault);
    const bool ok = err < kGradCheckTol;
    char line[128];
    std::snprintf(line, sizeof(line), "%-8s max_rel_err %.3g  %s\n", name.c_str(), err,
                  ok ? "pass" : "FAIL");
    std::cout << line;
    if (!ok) failed.push_back(name);
  }
  if (!failed.empty()) {
    std::string names;
    for (const auto& n : failed) names += (names.empty() ? "" : ", ") + n;
    std::cerr << "gradient check failed: " << names << "\n";
    return 1;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"multi-task dense prediction: data generation, training, evaluation, "
               "gradient verification"};
  app.require_subcommand(1);
  app.footer("Environment: BRIDGENET_THREADS caps the worker count.");

  CommonArgs gen_common, train_common, eval_common, grad_common;
  VariantArgs train_variant, eval_variant;
  TrainArgs targs;
  EvalArgs eargs;
  GradcheckArgs gargs;

  CLI::App* gen = app.add_subcommand("gen-data", "render a dataset to disk and print its manifest");
  add_common(gen, gen_common);

  CLI::App* train = app.add_subcommand("train", "train a variant and report validation metrics");
  add_common(train, train_common);
  add_variant(train, train_variant);
  train->add_option("--data", targs.data,
                    "dataset manifest (default: generate the split in memory)");
  train->add_option("--stl-ref", targs.stl_ref, "single-task reference report for gain columns");
  train->add_option("--iters", targs.iters, "override train.iters");
  train->add_option("--log-every", targs.log_every, "log cadence in iterations")
      ->capture_default_str();
  train->add_flag("--overfit-one-batch", targs.overfit_one_batch,
                  "always train on the first batch (sanity mode)");

  CLI::App* eval = app.add_subcommand("eval", "evaluate a checkpoint (or print the shipped "
                                              "reference table)");
  add_common(eval, eval_common);
  add_variant(eval, eval_variant);
  eval->add_option("--checkpoint", eargs.checkpoint, "checkpoint archive to evaluate");
  eval->add_option("--data", eargs.data,
                   "dataset manifest (default: generate the split in memory)");
  eval->add_option("--split", eargs.split, "dataset split to evaluate")
      ->check(CLI::IsMember({"train", "val"}))
      ->capture_default_str();
  eval->add_option("--stl-ref", eargs.stl_ref, "single-task reference report for gain columns");
  eval->add_flag("--reference-table", eargs.reference_table,
                 "print the shipped staged-variant table with recomputed gains and exit");

  CLI::App* grad = app.add_subcommand("gradcheck", "finite-difference check of every block");
  add_common(grad, grad_common);
  grad->add_option("--block", gargs.block, "check a single block")
      ->check(CLI::IsMember({"tpp", "bfe", "tfr", "hdc", "ffn", "model", "all"}))
      ->capture_default_str();
  grad->add_flag("--inject-fault", gargs.inject_fault,
                 "verification hook: corrupt the backward rule so the check must fail");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (gen->parsed()) return cmd_gen_data(load_config(gen_common));
    if (train->parsed()) return cmd_train(load_config(train_common), train_variant, targs);
    if (eval->parsed()) return cmd_eval(load_config(eval_common), eval_variant, eargs);
    if (grad->parsed()) {
      const uint64_t seed = grad_common.seed >= 0 ? static_cast<uint64_t>(grad_common.seed)
                                                  : load_config(grad_common).seed + 211;
      return cmd_gradcheck(gargs, seed);
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
