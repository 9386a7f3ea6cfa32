#pragma once

// Inner misreport optimization and the outer training loop, including
// multi-setting batching with zero padding for fixed-shape networks.

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "auctionlab/losses.hpp"
#include "auctionlab/nets.hpp"
#include "auctionlab/sampling.hpp"

namespace auctionlab {

enum class Objective { budget, lagrangian };

struct TrainConfig {
  int64_t outer_iterations = 5000;
  int batch_size = 128;
  double lr_outer = 0.001;
  double lr_inner = 0.1;
  int inner_steps_train = 25;
  int inner_steps_valid = 1000;
  int64_t dataset_size = 640000;
  uint64_t seed = 1;
  Precision run_precision = Precision::f64;
  Objective objective = Objective::budget;

  int64_t valid_every = 1000;
  int64_t valid_profiles = 4096;          // final validation
  int64_t valid_profiles_periodic = 512;  // cheap mid-run checks
  int inner_steps_valid_periodic = 200;
  int64_t schedule_period = 1250;
  int64_t checkpoint_every = 0;  // 0: only at validation events
  int workers = 1;
  bool fresh_batches = false;  // resample instead of cycling the fixed dataset
  bool wall_clock = true;      // off: wall_ms column written as 0 (reproducible)
  std::string out_dir;

  void validate() const;
};

// Adam over an arbitrary list of tensors (parameter groups or misreports).
class AdamOptimizer {
 public:
  AdamOptimizer(double lr, double beta1 = 0.9, double beta2 = 0.999,
                double eps = 1e-8);

  // One step over `targets` with gradients taken from each tensor's grad.
  void step(std::vector<Tensor>& targets);
  // Same but with explicit gradient buffers.
  void step_with_grads(std::vector<Tensor>& targets,
                       const std::vector<const std::vector<double>*>& grads);
  void reset();
  int64_t iterations() const { return t_; }

  const std::vector<std::vector<double>>& first_moments() const { return m_; }
  const std::vector<std::vector<double>>& second_moments() const { return v_; }
  void restore(int64_t t, std::vector<std::vector<double>> m,
               std::vector<std::vector<double>> v);

  double lr;

 private:
  double beta1_, beta2_, eps_;
  int64_t t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

struct MisreportResult {
  Tensor misreports;             // [B, n, m], best iterate per (sample, bidder)
  std::vector<double> regrets;   // [B * n], u(best) - u(truth), >= 0
  std::vector<double> truthful_utilities;  // [B * n]

  double mean_regret(int bidder, int64_t batch, int n) const;
};

// Gradient-ascent misreports for every (sample, bidder) block independently:
// truthful init, `steps` Adam updates on the negated utility, clamped to the
// per-item support after each step, best iterate kept (truth included).
// Parameters are read-only throughout. n_active/m_active restrict the search
// to the leading block when the batch is zero-padded.
MisreportResult optimize_misreports(const Mechanism& net, const Tensor& bids,
                                    const SettingSpec& support, int steps,
                                    double lr, int workers = 1,
                                    int n_active = -1, int m_active = -1);

struct Batch {
  Tensor bids;        // [B, n, m] (padded frame for fixed-shape nets)
  SettingSpec spec;   // the sampled constituent setting (real sizes)
  int n_active = 0;   // real bidders inside the frame
  int m_active = 0;   // real items inside the frame
};

// Batch source over a single setting or a uniform mixture. For a fixed-shape
// network the profiles are embedded in the max-shape frame with zero padding.
class BatchSource {
 public:
  BatchSource(MultiSettingSpec settings, int64_t dataset_size, int batch_size,
              uint64_t seed, bool fresh, std::optional<std::pair<int, int>> frame);

  Batch next();
  const MultiSettingSpec& settings() const { return settings_; }
  std::optional<std::pair<int, int>> frame() const { return frame_; }

  uint64_t picker_state() const;
  void restore_picker_state(uint64_t s);
  std::vector<int64_t> cursors() const { return cursors_; }
  void restore_cursors(const std::vector<int64_t>& c) { cursors_ = c; }

 private:
  MultiSettingSpec settings_;
  int batch_size_;
  bool fresh_;
  std::optional<std::pair<int, int>> frame_;
  SeededStream picker_;
  std::vector<Tensor> datasets_;       // per setting, empty in fresh mode
  std::vector<SeededStream> streams_;  // per setting (fresh mode)
  std::vector<int64_t> cursors_;
};

Tensor pad_to_frame(const Tensor& bids, int frame_n, int frame_m);

struct TrainState {
  DualState dual;
  LagrangianState lagrangian;
  Objective objective = Objective::budget;
  int64_t iteration = 0;
  int64_t skipped_steps = 0;
};

// One outer step: inner misreports, truthful + misreported forwards, outer
// loss, one Adam step, then the dual (or scheduled Lagrangian) update.
MetricsRecord train_step(MechanismNetwork& net, const Batch& batch,
                         TrainState& state, AdamOptimizer& opt,
                         const TrainConfig& cfg);

struct HistoryRow {
  int64_t iteration = 0;
  double revenue = 0.0;
  double regret_mean = 0.0;
  double ratio = 0.0;
  double gamma = 0.0;
  double r_max = 0.0;
  double wall_ms = 0.0;
};

struct TrainResult {
  std::vector<HistoryRow> history;  // one row per validation event
  HistoryRow final_row;
  TrainState state;
};

using ValidationHook = std::function<HistoryRow(
    const MechanismNetwork&, int64_t iteration, bool final, double r_max)>;
using CheckpointHook = std::function<void(const MechanismNetwork&,
                                          const TrainState&, const AdamOptimizer&)>;

// Full outer loop with periodic validation and budget schedule; hooks let the
// experiment layer own serialization formats. The optimizer is caller-owned so
// resumed runs continue with their restored moments.
TrainResult train(MechanismNetwork& net, BatchSource& source, TrainState state,
                  const TrainConfig& cfg, AdamOptimizer& opt,
                  const ValidationHook& validate,
                  const CheckpointHook& checkpoint = nullptr);

}  // namespace auctionlab
