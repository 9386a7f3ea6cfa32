#pragma once

// Experiment orchestration: run configuration (flat key-value file with
// sections), metrics CSV export, training/evaluation drivers, Monte-Carlo
// baselines, and allocation heatmaps.

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "auctionlab/checkpoint.hpp"
#include "auctionlab/validation.hpp"

namespace auctionlab {

struct RunConfig {
  // [run]
  uint64_t seed = 1;
  std::string out_dir = "runs/out";
  int threads = 1;
  Precision run_precision = Precision::f64;

  // [setting]
  std::string setting = "1x2";  // nxm, "asymmetric", or a multi preset

  // [architecture]
  Arch arch = Arch::regretformer;
  bool use_pe = false;
  PEMode pe_mode = PEMode::embedded;
  std::optional<int> hidden, layers, att_blocks, heads;

  // [objective]
  Objective objective = Objective::budget;
  double r_max_start = 0.01;
  double r_max_end = 0.001;
  double gamma0 = 1.0;
  double gamma_lr = 0.5;
  double lambda0 = 5.0;
  double rho0 = 1.0;
  double rho_lr = 0.25;
  int update_period = 100;

  // [train]
  TrainConfig train;

  static RunConfig from_file(const std::string& path);
  static RunConfig from_text(const std::string& text);
  void apply_override(const std::string& dotted_key, const std::string& value);
  void finalize();  // propagate shared fields, validate
};

// Parsed "[section] key = value" file; '#' and ';' start comments.
std::map<std::string, std::string> parse_config_text(const std::string& text);

// CSV schema: iteration,revenue,regret_mean,ratio,gamma,r_max,wall_ms
void export_metrics(const std::vector<HistoryRow>& history,
                    const std::string& path);
std::vector<HistoryRow> load_metrics(const std::string& path);

struct RunArtifacts {
  MechanismNetwork net;
  TrainResult result;
  std::string checkpoint_path;  // final checkpoint
  std::string metrics_path;
};

// Full training pipeline: data, net, dual/lagrangian state, loop, validation,
// checkpoints, metrics CSV. `resume_from` restores an interrupted run.
RunArtifacts run_training(const RunConfig& cfg,
                          const std::string& resume_from = "");

// Per-setting evaluation of a stored network.
EvaluationReport evaluate_checkpoint(const Checkpoint& ckpt,
                                     const SettingSpec& setting,
                                     int64_t profiles, int inner_steps,
                                     double r_max, uint64_t seed, int workers);

struct BaselineResult {
  double revenue_mean = 0.0;
  double standard_error = 0.0;
  int64_t samples = 0;
};

BaselineResult run_baseline(BaselineMechanism::Kind kind,
                            const SettingSpec& setting, int64_t samples,
                            uint64_t seed);

struct HeatmapResult {
  int grid = 0;
  std::vector<double> axis1, axis2;        // item-value meshes
  std::vector<std::vector<double>> item_probability;  // [m][grid*grid]
  // Named boundary segments (x0, y0) - (x1, y1) of the known optimal regions.
  struct Segment {
    std::string name;
    double x0, y0, x1, y1;
  };
  std::vector<Segment> overlay;
};

// Allocation probabilities of a single-bidder two-item mechanism over a mesh.
HeatmapResult heatmap(const Mechanism& mech, const SettingSpec& setting,
                      int grid);
void write_heatmap(const HeatmapResult& result, const std::string& dir);

// Mean absolute deviation of allocation probabilities from {0,1} over the
// interior of the mesh (smooth-approximation diagnostic).
double heatmap_interior_mad(const HeatmapResult& result);

}  // namespace auctionlab
