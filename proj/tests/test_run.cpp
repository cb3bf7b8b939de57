// Run orchestration: config parsing round trips, variant selection, the
// deterministic training loop, checkpoint restore/mismatch behavior, report
// parsing, and the shipped benchmark fixtures.
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "bridgenet/run.hpp"
#include "doctest.h"

using namespace bridgenet;
namespace fs = std::filesystem;

namespace {

RunConfig tiny_run() {
  RunConfig rc;
  rc.scene.image = 16;
  rc.scene.num_classes = 3;
  rc.scene.min_shapes = 1;
  rc.scene.max_shapes = 3;
  rc.channels = 8;
  rc.strides = {2, 4, 8};
  rc.kv_downsample = {4, 2, 1};
  rc.tasks = {"seg", "depth"};
  rc.n_train = 4;
  rc.n_val = 2;
  rc.iters = 12;
  rc.batch_size = 2;
  rc.optim.lr = 1e-3;
  return rc;
}

std::vector<Sample> make_samples(const RunConfig& rc, int count, uint64_t seed0) {
  std::vector<Sample> out;
  for (int i = 0; i < count; ++i) out.push_back(generate_scene(rc.scene, seed0 + uint64_t(i)));
  return out;
}

fs::path fresh_dir(const char* name) {
  fs::path dir = fs::temp_directory_path() / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

}  // namespace

TEST_SUITE_BEGIN("run");

// ---------------------------------------------------------------------------
// config
// ---------------------------------------------------------------------------
TEST_CASE("config: every field survives a text round trip") {
  RunConfig a;
  a.scene.image = 48;
  a.scene.min_shapes = 1;
  a.scene.max_shapes = 9;
  a.scene.num_classes = 7;
  a.scene.depth_near = 0.25;
  a.scene.depth_far = 3.5;
  a.scene.noise = 0.07;
  a.scene.seed = 77;
  a.n_train = 33;
  a.n_val = 11;
  a.channels = 16;
  a.heads = 4;
  a.tfr_depth = 3;
  a.query_downsample = 4;
  a.strides = {2, 4};
  a.kv_downsample = {2, 1};
  a.tasks = {"depth", "edges"};
  a.optim.kind = OptimKind::sgd;
  a.optim.lr = 0.125;
  a.optim.weight_decay = 0.01;
  a.optim.poly_power = 1.5;
  a.optim.momentum = 0.8;
  a.optim.beta1 = 0.85;
  a.optim.beta2 = 0.95;
  a.iters = 777;
  a.eval_interval = 55;
  a.batch_size = 6;
  a.out_dir = "runs/elsewhere";
  a.seed = 123456;

  const RunConfig b = RunConfig::from_text(a.to_text());
  CHECK(b.scene.image == a.scene.image);
  CHECK(b.scene.min_shapes == a.scene.min_shapes);
  CHECK(b.scene.max_shapes == a.scene.max_shapes);
  CHECK(b.scene.num_classes == a.scene.num_classes);
  CHECK(b.scene.depth_near == a.scene.depth_near);
  CHECK(b.scene.depth_far == a.scene.depth_far);
  CHECK(b.scene.noise == a.scene.noise);
  CHECK(b.scene.seed == a.scene.seed);
  CHECK(b.n_train == a.n_train);
  CHECK(b.n_val == a.n_val);
  CHECK(b.channels == a.channels);
  CHECK(b.heads == a.heads);
  CHECK(b.tfr_depth == a.tfr_depth);
  CHECK(b.query_downsample == a.query_downsample);
  CHECK(b.strides == a.strides);
  CHECK(b.kv_downsample == a.kv_downsample);
  CHECK(b.tasks == a.tasks);
  CHECK(b.optim.kind == a.optim.kind);
  CHECK(b.optim.lr == a.optim.lr);
  CHECK(b.optim.weight_decay == a.optim.weight_decay);
  CHECK(b.optim.poly_power == a.optim.poly_power);
  CHECK(b.optim.momentum == a.optim.momentum);
  CHECK(b.optim.beta1 == a.optim.beta1);
  CHECK(b.optim.beta2 == a.optim.beta2);
  CHECK(b.iters == a.iters);
  CHECK(b.eval_interval == a.eval_interval);
  CHECK(b.batch_size == a.batch_size);
  CHECK(b.out_dir == a.out_dir);
  CHECK(b.seed == a.seed);
}

TEST_CASE("config: unknown keys and bad values are named in the error") {
  try {
    RunConfig::from_text("model.chanels = 8\n");
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("model.chanels") != std::string::npos);
  }
  CHECK_THROWS_AS(RunConfig::from_text("model.channels = eight\n"), ConfigError);
  CHECK_THROWS_AS(RunConfig::from_text("just some words\n"), ConfigError);
  CHECK_THROWS_AS(RunConfig::from_file("/nonexistent/path.cfg"), IoError);
}

TEST_CASE("config: comments, blanks, and inline comments parse") {
  const RunConfig c = RunConfig::from_text(
      "# a comment line\n"
      "\n"
      "model.channels = 24   # inline comment\n"
      "model.tasks = seg, normals\n");
  CHECK(c.channels == 24);
  CHECK(c.tasks == std::vector<std::string>{"seg", "normals"});
}

TEST_CASE("config: the model derives its input size and task specs") {
  RunConfig rc = tiny_run();
  const ModelConfig mc = rc.model_config();
  CHECK(mc.image_h == 16);
  CHECK(mc.image_w == 16);
  REQUIRE(mc.tasks.size() == 2);
  CHECK(mc.tasks[0].kind == TaskKind::categorical);
  CHECK(mc.tasks[0].channels == 3);  // scene.num_classes
  CHECK(mc.tasks[1].kind == TaskKind::regression);
  rc.tasks = {"seg", "gloss"};
  CHECK_THROWS_AS(static_cast<void>(rc.model_config()), ConfigError);
}

// ---------------------------------------------------------------------------
// variants
// ---------------------------------------------------------------------------
TEST_CASE("variants: stl keeps one task with every block off") {
  RunConfig rc = tiny_run();
  VariantSpec v;
  v.variant = "stl";
  v.stl_task = "depth";
  const ModelConfig mc = apply_variant(rc, v);
  REQUIRE(mc.tasks.size() == 1);
  CHECK(mc.tasks[0].name == "depth");
  CHECK_FALSE(mc.use_tpp);
  CHECK_FALSE(mc.use_bfe);
  CHECK_FALSE(mc.use_tfr);
  v.stl_task = "";
  CHECK_THROWS_AS(static_cast<void>(apply_variant(rc, v)), ConfigError);
  v.stl_task = "edges";  // not in this run's task list
  CHECK_THROWS_AS(static_cast<void>(apply_variant(rc, v)), ConfigError);
}

TEST_CASE("variants: baseline disables blocks, ablations trim them") {
  RunConfig rc = tiny_run();
  VariantSpec v;
  v.variant = "mtl_baseline";
  ModelConfig mc = apply_variant(rc, v);
  CHECK(mc.tasks.size() == 2);
  CHECK_FALSE(mc.use_tpp);
  CHECK_FALSE(mc.use_bfe);
  CHECK_FALSE(mc.use_tfr);

  v.variant = "bridgenet";
  v.ablate = {"tpp", "tfr"};
  mc = apply_variant(rc, v);
  CHECK_FALSE(mc.use_tpp);
  CHECK(mc.use_bfe);
  CHECK_FALSE(mc.use_tfr);

  v.ablate = {"everything"};
  CHECK_THROWS_AS(static_cast<void>(apply_variant(rc, v)), ConfigError);
  v.ablate.clear();
  v.variant = "mtl";
  CHECK_THROWS_AS(static_cast<void>(apply_variant(rc, v)), ConfigError);
}

TEST_CASE("variants: tfr sizes choose the refiner depth") {
  RunConfig rc = tiny_run();
  VariantSpec v;
  v.tfr_size = "base";
  CHECK(apply_variant(rc, v).tfr_depth == 2);
  v.tfr_size = "large";
  CHECK(apply_variant(rc, v).tfr_depth == 4);
  v.tfr_size = "huge";
  CHECK(apply_variant(rc, v).tfr_depth == 6);
  v.tfr_size = "jumbo";
  CHECK_THROWS_AS(static_cast<void>(apply_variant(rc, v)), ConfigError);
}

// ---------------------------------------------------------------------------
// targets
// ---------------------------------------------------------------------------
TEST_CASE("targets: each task kind picks the matching ground truth") {
  RunConfig rc = tiny_run();
  rc.tasks = {"seg", "depth", "normals", "edges"};
  const ModelConfig mc = rc.model_config();
  const Sample s = generate_scene(rc.scene, 5);
  const auto targets = targets_for(mc, s);
  REQUIRE(targets.size() == 4);
  CHECK(targets[0].labels.shape() == Shape{16, 16});
  CHECK(targets[1].values.shape() == Shape{1, 16, 16});
  CHECK(targets[2].values.shape() == Shape{3, 16, 16});
  CHECK(targets[3].values.shape() == Shape{16, 16});
  CHECK(targets[3].mask.shape() == Shape{16, 16});
}

// ---------------------------------------------------------------------------
// training loop
// ---------------------------------------------------------------------------
TEST_CASE("train: two runs from the same seed log identical bytes") {
  const RunConfig rc = tiny_run();
  const auto samples = make_samples(rc, 4, 100);
  auto run_once = [&]() {
    Rng rng(rc.seed + 1);
    BridgeNet net(apply_variant(rc, VariantSpec{}), rng);
    ParamList<float> params;
    net.collect_params("net", params);
    Optimizer opt(rc.optim, params);
    std::ostringstream log;
    TrainOptions opts;
    opts.log_every = 3;
    const TrainResult res = train_model(net, opt, rc, opts, samples, log);
    CHECK(res.ok);
    return log.str();
  };
  const std::string log1 = run_once();
  const std::string log2 = run_once();
  CHECK(log1 == log2);
  CHECK(log1.find("# iter\tlr\ttotal\tseg\tdepth") == 0);
  // header + iterations 0,3,6,9 + final iteration 11
  CHECK(std::count(log1.begin(), log1.end(), '\n') == 6);
}

TEST_CASE("train: losses are finite and the result reports both endpoints") {
  const RunConfig rc = tiny_run();
  const auto samples = make_samples(rc, 4, 200);
  Rng rng(9);
  BridgeNet net(apply_variant(rc, VariantSpec{}), rng);
  ParamList<float> params;
  net.collect_params("net", params);
  Optimizer opt(rc.optim, params);
  std::ostringstream log;
  const TrainResult res = train_model(net, opt, rc, TrainOptions{}, samples, log);
  CHECK(res.ok);
  CHECK(res.failed_iter == -1);
  CHECK(std::isfinite(res.first_loss));
  CHECK(std::isfinite(res.final_loss));
  CHECK(res.first_loss > 0.0f);
}

TEST_CASE("train: the checkpoint hook fires on cadence, never at the end") {
  RunConfig rc = tiny_run();
  rc.iters = 10;
  const auto samples = make_samples(rc, 2, 250);
  Rng rng(19);
  BridgeNet net(apply_variant(rc, VariantSpec{}), rng);
  ParamList<float> params;
  net.collect_params("net", params);
  Optimizer opt(rc.optim, params);
  std::ostringstream log;
  TrainOptions opts;
  opts.checkpoint_interval = 4;
  std::vector<int> fired;
  opts.on_checkpoint = [&](int it) { fired.push_back(it); };
  CHECK(train_model(net, opt, rc, opts, samples, log).ok);
  CHECK(fired == std::vector<int>{4, 8});  // 10 would be the caller's final save
}

TEST_CASE("train: a non-finite loss stops with the iteration on record") {
  RunConfig rc = tiny_run();
  rc.optim.lr = 1e14;  // detonates the parameters after the first step
  rc.iters = 50;
  const auto samples = make_samples(rc, 2, 300);
  Rng rng(10);
  BridgeNet net(apply_variant(rc, VariantSpec{}), rng);
  ParamList<float> params;
  net.collect_params("net", params);
  Optimizer opt(rc.optim, params);
  std::ostringstream log;
  const TrainResult res = train_model(net, opt, rc, TrainOptions{}, samples, log);
  CHECK_FALSE(res.ok);
  CHECK(res.failed_iter > 0);
  CHECK(res.failed_iter < 50);
  CHECK(log.str().find("non-finite") != std::string::npos);
}

// ---------------------------------------------------------------------------
// checkpoints
// ---------------------------------------------------------------------------
TEST_CASE("checkpoint: parameters and optimizer state restore exactly") {
  const RunConfig rc = tiny_run();
  const auto samples = make_samples(rc, 2, 400);
  Rng rng(11);
  BridgeNet net(apply_variant(rc, VariantSpec{}), rng);
  ParamList<float> params;
  net.collect_params("net", params);
  Optimizer opt(rc.optim, params);
  std::ostringstream log;
  RunConfig short_run = rc;
  short_run.iters = 3;
  train_model(net, opt, short_run, TrainOptions{}, samples, log);

  const auto dir = fresh_dir("bridgenet_ckpt");
  const std::string path = (dir / "ckpt.btnr").string();
  save_checkpoint(path, net, &opt, 3);

  // a differently-seeded twin restores to the exact trained weights
  Rng rng2(999);
  BridgeNet net2(apply_variant(rc, VariantSpec{}), rng2);
  ParamList<float> params2;
  net2.collect_params("net", params2);
  Optimizer opt2(rc.optim, params2);
  const int64_t iter = load_checkpoint(path, net2, &opt2);
  CHECK(iter == 3);
  CHECK(opt2.step_count == opt.step_count);
  for (size_t i = 0; i < params.size(); ++i)
    CHECK(params2[i].tensor.values() == params[i].tensor.values());

  // and continuing both for one identical step stays in lockstep
  std::ostringstream log1, log2;
  RunConfig one = rc;
  one.iters = 1;
  train_model(net, opt, one, TrainOptions{}, samples, log1);
  train_model(net2, opt2, one, TrainOptions{}, samples, log2);
  CHECK(log1.str() == log2.str());
  fs::remove_all(dir);
}

TEST_CASE("checkpoint: a different architecture is refused by name or shape") {
  const RunConfig rc = tiny_run();
  Rng rng(12);
  BridgeNet net(apply_variant(rc, VariantSpec{}), rng);
  const auto dir = fresh_dir("bridgenet_ckpt_mismatch");
  const std::string path = (dir / "ckpt.btnr").string();
  save_checkpoint(path, net, nullptr, 0);

  RunConfig wide = rc;
  wide.channels = 16;  // same names, different shapes
  Rng rng2(13);
  BridgeNet net_wide(apply_variant(wide, VariantSpec{}), rng2);
  CHECK_THROWS_AS(static_cast<void>(load_checkpoint(path, net_wide, nullptr)), ConfigError);

  RunConfig fewer = rc;
  fewer.tasks = {"seg"};  // the checkpoint has depth parameters this net lacks
  Rng rng3(14);
  BridgeNet net_fewer(apply_variant(fewer, VariantSpec{}), rng3);
  CHECK_THROWS_AS(static_cast<void>(load_checkpoint(path, net_fewer, nullptr)), ConfigError);

  // resuming an optimizer from a weights-only checkpoint is also an error
  Rng rng4(15);
  BridgeNet net_same(apply_variant(rc, VariantSpec{}), rng4);
  ParamList<float> params_same;
  net_same.collect_params("net", params_same);
  Optimizer opt_same(rc.optim, params_same);
  CHECK_THROWS_AS(static_cast<void>(load_checkpoint(path, net_same, &opt_same)), ConfigError);
  CHECK(load_checkpoint(path, net_same, nullptr) == 0);
  fs::remove_all(dir);
}

// ---------------------------------------------------------------------------
// evaluation
// ---------------------------------------------------------------------------
TEST_CASE("eval: one result per task with its pinned metric and direction") {
  RunConfig rc = tiny_run();
  rc.tasks = {"seg", "depth", "normals", "edges"};
  Rng rng(16);
  BridgeNet net(apply_variant(rc, VariantSpec{}), rng);
  const auto samples = make_samples(rc, 2, 500);
  const MetricsReport report = evaluate_model(net, samples);
  REQUIRE(report.tasks.size() == 4);
  CHECK(report.samples == 2);
  CHECK(report.tasks[0].metric_name == "miou");
  CHECK_FALSE(report.tasks[0].lower_is_better);
  CHECK(report.tasks[1].metric_name == "rmse");
  CHECK(report.tasks[1].lower_is_better);
  CHECK(report.tasks[2].metric_name == "mErr");
  CHECK(report.tasks[3].metric_name == "odsF");
  CHECK(report.tasks[0].value >= 0.0);
  CHECK(report.tasks[0].value <= 1.0);
  CHECK(report.tasks[1].value >= 0.0);
  CHECK(report.tasks[2].value >= 0.0);
  CHECK(report.tasks[2].value <= 180.0);
  CHECK(report.tasks[3].value >= 0.0);
  CHECK(report.tasks[3].value <= 1.0);
  CHECK_FALSE(report.average_gain.has_value());

  std::map<std::string, double> refs{
      {"seg", 0.5}, {"depth", 0.4}, {"normals", 30.0}, {"edges", 0.5}};
  const MetricsReport gained = evaluate_model(net, samples, &refs);
  CHECK(gained.average_gain.has_value());
  for (const auto& t : gained.tasks) CHECK(t.gain.has_value());

  refs.erase("edges");
  const MetricsReport partial = evaluate_model(net, samples, &refs);
  CHECK_FALSE(partial.average_gain.has_value());
  CHECK_FALSE(partial.tasks[3].gain.has_value());
}

TEST_CASE("eval: kv reports parse back to task values only") {
  MetricsReport r;
  r.tasks.push_back({"seg", "miou", 0.75, false, 0.5, {}});
  r.tasks.push_back({"depth", "rmse", 0.3, true, {}, {}});
  r.samples = 4;
  r.compute_gains();
  const auto dir = fresh_dir("bridgenet_kv_report");
  const std::string path = (dir / "report.kv").string();
  std::ofstream(path) << r.to_kv();
  const auto parsed = parse_kv_report(path);
  REQUIRE(parsed.size() == 2);
  CHECK(parsed.at("seg") == doctest::Approx(0.75).epsilon(1e-9));
  CHECK(parsed.at("depth") == doctest::Approx(0.3).epsilon(1e-9));
  CHECK_THROWS_AS(static_cast<void>(parse_kv_report((dir / "missing.kv").string())), IoError);
  std::ofstream(path, std::ios::trunc) << "nonsense without equals\n";
  CHECK_THROWS_AS(static_cast<void>(parse_kv_report(path)), FormatError);
  fs::remove_all(dir);
}

TEST_CASE("eval: dataset splits load separately") {
  RunConfig rc = tiny_run();
  rc.scene.seed = 21;
  const auto dir = fresh_dir("bridgenet_split_load");
  const std::string manifest = build_dataset(rc.scene, 3, 2, dir.string());
  CHECK(load_split(manifest, "train").size() == 3);
  CHECK(load_split(manifest, "val").size() == 2);
  CHECK_THROWS_AS(static_cast<void>(load_split(manifest, "test")), ConfigError);
  fs::remove_all(dir);
}

// ---------------------------------------------------------------------------
// shipped fixtures
// ---------------------------------------------------------------------------
TEST_CASE("fixtures: recomputed gains land on the shipped deltas") {
  const auto& ref = fixture_reference_metrics();
  const auto& lower = fixture_lower_is_better();
  REQUIRE(ref.size() == 4);
  REQUIRE(lower.size() == 4);
  for (const FixtureRow& row : fixture_rows()) {
    std::vector<double> gains;
    for (size_t j = 0; j < ref.size(); ++j)
      gains.push_back(relative_gain(row.metrics[j], ref[j], lower[j]));
    CHECK(std::abs(delta_mtl(gains) - row.expected_delta) < 0.01);
  }
  const std::string table = format_fixture_table();
  CHECK(table.find("single-task reference") != std::string::npos);
  CHECK(table.find("+ task refinement (huge)") != std::string::npos);
  CHECK(table.find("+2.45") != std::string::npos);
}

TEST_SUITE_END();
