#pragma once

// Evaluation protocols: full regret evaluation, budget ratio, cross-misreport
// regret, and network distillation.

#include <string>
#include <vector>

#include "auctionlab/training.hpp"

namespace auctionlab {

struct EvaluationReport {
  std::string setting;
  double revenue = 0.0;
  double regret_mean = 0.0;  // averaged over bidders
  double regret_sum = 0.0;
  double ratio = 0.0;        // (sum R / sum P) / r_max
  int64_t samples = 0;
  int inner_steps = 0;
  std::vector<double> per_bidder_regret;
  std::vector<double> per_bidder_payment;
};

// Revenue/regret on held-out profiles with the gradient misreport estimator.
// pad_frame embeds the profiles into a larger zero-padded frame, for
// fixed-shape networks trained on setting mixtures; metrics cover the active
// block only.
struct EvalOptions {
  double lr_inner = 0.1;
  int workers = 1;
  std::optional<std::pair<int, int>> pad_frame;
};

EvaluationReport evaluate_mechanism(const Mechanism& mech,
                                    const SettingSpec& setting,
                                    const Tensor& profiles, int inner_steps,
                                    double r_max, const EvalOptions& opts = {});

double budget_ratio(const EvaluationReport& report, double r_max);

// Regret of `target` evaluated at misreports optimized against `prober`
// (full inner loop on the prober, no further optimization). Raw values are
// reported; they may be negative when the prober's best differs.
struct CrossMisreportReport {
  std::vector<double> per_bidder;  // batch means
  double mean = 0.0;
};

CrossMisreportReport cross_misreport_regret(const Mechanism& target,
                                            const Mechanism& prober,
                                            const SettingSpec& setting,
                                            const Tensor& profiles,
                                            int inner_steps = 1000,
                                            double lr_inner = 0.1,
                                            int workers = 1);

struct DistillConfig {
  int64_t iterations = 3000;
  int batch_size = 128;
  double lr = 0.001;
  int inner_steps = 25;       // student misreports during distillation
  int eval_inner_steps = 1000;
  int64_t eval_profiles = 2048;
  uint64_t seed = 17;
  int workers = 1;
};

struct DistillReport {
  double teacher_revenue = 0.0;
  double student_revenue = 0.0;
  // regret[who][misreports-of]: {teacher,student} x {teacher,student}
  double regret[2][2] = {{0, 0}, {0, 0}};
  double final_kl = 0.0;
};

// KL between the allocation categoricals (per item, dummy included) plus the
// Bernoulli payment-fraction KL, teacher first; probabilities clamped at 1e-7
// for the Bernoulli term. Evaluated at the given truthful bids.
Tensor distillation_loss(const ForwardOutput& teacher, const ForwardOutput& student);

DistillReport distill(const MechanismNetwork& teacher, MechanismNetwork& student,
                      const SettingSpec& setting, const DistillConfig& cfg);

}  // namespace auctionlab
