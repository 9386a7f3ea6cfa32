#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "auctionlab/experiment.hpp"

using namespace auctionlab;

namespace {

std::filesystem::path temp_dir(const std::string& tag) {
  auto dir = std::filesystem::temp_directory_path() / ("auctionlab_test_" + tag);
  std::filesystem::create_directories(dir);
  return dir;
}

Checkpoint sample_checkpoint(uint64_t seed) {
  MechanismNetwork net =
      MechanismNetwork::build(default_net_config(Arch::regretformer, 1, 2), seed);
  TrainState state;
  state.objective = Objective::budget;
  state.iteration = 123;
  state.dual.gamma = 1.5;
  state.dual.r_max = 0.004;
  state.dual.r_max_mult = 0.8;
  AdamOptimizer opt(1e-3);
  return make_checkpoint(net, state, opt, nullptr);
}

}  // namespace

TEST_CASE("checkpoint bytes round-trip bit-exactly") {
  Checkpoint ckpt = sample_checkpoint(21);
  auto bytes = serialize_checkpoint(ckpt);
  Checkpoint back = parse_checkpoint(bytes);
  auto again = serialize_checkpoint(back);
  REQUIRE(bytes.size() == again.size());
  CHECK(std::equal(bytes.begin(), bytes.end(), again.begin()));

  REQUIRE(back.params.size() == ckpt.params.size());
  for (size_t i = 0; i < back.params.size(); ++i) {
    CHECK(back.params[i].name == ckpt.params[i].name);
    for (size_t k = 0; k < back.params[i].tensor.values().size(); ++k) {
      CHECK(back.params[i].tensor.values()[k] ==
            ckpt.params[i].tensor.values()[k]);
    }
  }
  CHECK(back.state.iteration == 123);
  CHECK(back.state.dual.gamma == 1.5);
}

TEST_CASE("checkpoint format errors") {
  Checkpoint ckpt = sample_checkpoint(22);
  auto bytes = serialize_checkpoint(ckpt);

  SUBCASE("flipped magic") {
    auto bad = bytes;
    bad[0] ^= 0xff;
    CHECK_THROWS_AS(parse_checkpoint(bad), FormatError);
  }
  SUBCASE("truncation") {
    auto bad = bytes;
    bad.resize(bad.size() / 2);
    CHECK_THROWS_AS(parse_checkpoint(bad), FormatError);
  }
  SUBCASE("payload corruption trips the checksum") {
    auto bad = bytes;
    bad[bytes.size() / 2] ^= 0x01;
    CHECK_THROWS_AS(parse_checkpoint(bad), FormatError);
  }
}

TEST_CASE("restored network reproduces forwards exactly") {
  Checkpoint ckpt = sample_checkpoint(23);
  auto dir = temp_dir("ckpt");
  std::string path = (dir / "net.bin").string();
  save_checkpoint(path, ckpt);
  Checkpoint loaded = load_checkpoint(path);
  MechanismNetwork a = restore_network(ckpt);
  MechanismNetwork b = restore_network(loaded);
  SeededStream rng(5);
  Tensor bids = sample_profiles(SettingSpec::uniform01(1, 2), 8, rng);
  ForwardOutput oa = a.forward(bids);
  ForwardOutput ob = b.forward(bids);
  for (size_t i = 0; i < oa.allocation.values().size(); ++i) {
    CHECK(oa.allocation.values()[i] == ob.allocation.values()[i]);
  }
}

TEST_CASE("config parsing, overrides, and errors") {
  std::string text =
      "[run]\n"
      "seed = 9\n"
      "out_dir = /tmp/auctionlab_cfg\n"
      "; comment line\n"
      "[setting]\n"
      "preset = 2x3\n"
      "[architecture]\n"
      "variant = equivariantnet\n"
      "[objective]\n"
      "kind = budget\n"
      "r_max_end = 0.0001  # inline comment\n"
      "[train]\n"
      "outer_iterations = 50\n"
      "batch_size = 16\n";
  RunConfig cfg = RunConfig::from_text(text);
  CHECK(cfg.seed == 9);
  CHECK(cfg.setting == "2x3");
  CHECK(cfg.arch == Arch::equivariantnet);
  CHECK(cfg.r_max_end == 0.0001);
  CHECK(cfg.train.outer_iterations == 50);
  CHECK(cfg.train.batch_size == 16);
  CHECK(cfg.train.seed == 9);  // propagated

  cfg.apply_override("train.batch_size", "32");
  CHECK(cfg.train.batch_size == 32);
  CHECK_THROWS_AS(cfg.apply_override("nope.key", "1"), std::invalid_argument);
  CHECK_THROWS_AS(RunConfig::from_text("[run\nseed=1\n"), std::invalid_argument);
  CHECK_THROWS_AS(RunConfig::from_text("keyvalue\n"), std::invalid_argument);
}

TEST_CASE("metrics csv schema and round trip") {
  std::vector<HistoryRow> rows(3);
  rows[0] = {500, 0.55, 0.001, 1.2, 1.7, 0.004, 0.0};
  rows[1] = {1000, 0.57, 0.0005, 0.9, 2.1, 0.001, 0.0};
  rows[2] = {1500, 0.58, 0.0004, 0.8, 2.2, 0.001, 0.0};
  auto dir = temp_dir("csv");
  std::string path = (dir / "metrics.csv").string();
  export_metrics(rows, path);

  std::ifstream in(path);
  std::string header;
  std::getline(in, header);
  CHECK(header == "iteration,revenue,regret_mean,ratio,gamma,r_max,wall_ms");
  int count = 0;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty()) ++count;
  }
  CHECK(count == 3);

  auto back = load_metrics(path);
  REQUIRE(back.size() == 3);
  CHECK(back[1].revenue == 0.57);
  CHECK(back[2].iteration == 1500);
}

TEST_CASE("tiny training run and resume produce identical trajectories") {
  RunConfig cfg;
  cfg.seed = 33;
  cfg.setting = "1x2";
  cfg.arch = Arch::regretformer;
  cfg.hidden = 8;
  cfg.objective = Objective::budget;
  cfg.r_max_start = 0.01;
  cfg.r_max_end = 0.001;
  cfg.train.outer_iterations = 12;
  cfg.train.batch_size = 8;
  cfg.train.inner_steps_train = 2;
  cfg.train.inner_steps_valid = 4;
  cfg.train.inner_steps_valid_periodic = 4;
  cfg.train.valid_profiles = 16;
  cfg.train.valid_profiles_periodic = 16;
  cfg.train.dataset_size = 64;
  cfg.train.valid_every = 4;
  cfg.train.schedule_period = 6;
  cfg.train.wall_clock = false;

  auto run_dir = temp_dir("run_a");
  cfg.out_dir = run_dir.string();
  RunArtifacts full = run_training(cfg);
  REQUIRE(full.result.history.size() == 3);  // at 4, 8, 12

  // Resume from the full run's own iteration-8 snapshot: the continuation
  // must replay the tail of the same trajectory.
  RunConfig rest = cfg;
  rest.out_dir = temp_dir("run_c").string();
  RunArtifacts resumed =
      run_training(rest, (run_dir / "checkpoint_00000008.bin").string());

  CHECK(resumed.result.final_row.revenue == full.result.final_row.revenue);
  CHECK(resumed.result.final_row.regret_mean == full.result.final_row.regret_mean);
  CHECK(resumed.result.final_row.ratio == full.result.final_row.ratio);

  // determinism across identical reruns, including the metrics file bytes
  RunConfig again = cfg;
  again.out_dir = temp_dir("run_d").string();
  RunArtifacts second = run_training(again);
  std::ifstream fa(full.metrics_path), fb(second.metrics_path);
  std::string ca((std::istreambuf_iterator<char>(fa)),
                 std::istreambuf_iterator<char>());
  std::string cb((std::istreambuf_iterator<char>(fb)),
                 std::istreambuf_iterator<char>());
  CHECK(ca == cb);
  CHECK(!ca.empty());
}

TEST_CASE("heatmap mesh, bounds, and overlays") {
  MechanismNetwork net =
      MechanismNetwork::build(default_net_config(Arch::regretformer, 1, 2), 44);
  net.params().set_requires_grad(false);
  SettingSpec spec = SettingSpec::uniform01(1, 2);

  HeatmapResult tiny = heatmap(net, spec, 2);
  for (const auto& item : tiny.item_probability) {
    REQUIRE(item.size() == 4);
    for (double z : item) {
      CHECK(std::isfinite(z));
      CHECK(z >= 0.0);
      CHECK(z <= 1.0);
    }
  }

  HeatmapResult res = heatmap(net, spec, 16);
  CHECK(res.overlay.size() == 5);  // symmetric-box boundary segments
  double mad = heatmap_interior_mad(res);
  CHECK(mad >= 0.0);
  CHECK(mad <= 0.5);

  auto dir = temp_dir("heat");
  write_heatmap(res, dir.string());
  CHECK(std::filesystem::exists(dir / "heatmap_item0.csv"));
  CHECK(std::filesystem::exists(dir / "heatmap_item1.csv"));
  CHECK(std::filesystem::exists(dir / "heatmap_overlay.csv"));

  SettingSpec wrong = SettingSpec::uniform01(2, 2);
  CHECK_THROWS_AS(heatmap(net, wrong, 8), std::invalid_argument);
}
