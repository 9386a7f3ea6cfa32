#pragma once

// Inner misreport loss, the two outer objectives, multiplier updates, and the
// regret-budget schedule.

#include <vector>

#include "auctionlab/auction.hpp"
#include "auctionlab/tensor.hpp"

namespace auctionlab {

// Regret-budget controller. gamma is the dual variable, r_max the current
// budget as a fraction of revenue.
struct DualState {
  double gamma = 1.0;
  double gamma_lr = 0.5;
  double r_max = 0.01;
  double r_max_end = 0.001;
  double r_max_mult = 1.0;

  void validate() const;
};

struct LagrangianState {
  std::vector<double> lambdas;  // one per bidder, >= 0
  double rho = 1.0;
  double rho_lr = 0.25;
  int update_period = 100;
};

struct MetricsRecord {
  std::vector<double> payments;  // P_i, batch means
  std::vector<double> regrets;   // R_i, batch means, >= 0
  double revenue = 0.0;          // sum_i P_i
  double regret_mean = 0.0;      // (1/n) sum_i R_i
  double ratio = 0.0;            // (sum R / sum P) / r_max

  double regret_sum() const;
  static MetricsRecord from(const std::vector<double>& payments,
                            const std::vector<double>& regrets, double r_max);
};

// -u_i(v_i, (v_i', v_-i); w), valued at the true valuations, for a whole
// batch at once. Differentiable in whatever inputs carry requires_grad.
Tensor inner_loss(int bidder, const Tensor& true_valuations,
                  const Tensor& misreported_bids, const Mechanism& net);

// Eq.-style outer objectives over per-bidder batch means (graph tensors).
Tensor outer_loss_lagrangian(const Tensor& payments_mean,
                             const Tensor& regrets_mean,
                             const LagrangianState& state);
Tensor outer_loss_budget(const Tensor& payments_mean, const Tensor& regrets_mean,
                         double gamma);

LagrangianState lagrangian_multiplier_update(const LagrangianState& state,
                                             const std::vector<double>& regrets);

// One dual ascent step on gamma; no-op when revenue is not positive. A zero
// regret estimate is floored at 1e-12 inside the log.
DualState dual_update(const DualState& state, double sum_regret,
                      double sum_payment);

DualState budget_schedule_step(const DualState& state);

// Multiplier that brings r_max from start to end over the first two-thirds
// of `schedule_steps` scheduled decays.
double budget_schedule_multiplier(double r_start, double r_end,
                                  int64_t schedule_steps);

}  // namespace auctionlab
