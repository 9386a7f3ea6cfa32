#include "auctionlab/losses.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace auctionlab {

void DualState::validate() const {
  if (gamma < 0.0 || gamma_lr <= 0.0 || r_max <= 0.0 || r_max_end <= 0.0 ||
      r_max < r_max_end || r_max_mult <= 0.0 || r_max_mult > 1.0) {
    throw std::invalid_argument("dual state out of range");
  }
}

double MetricsRecord::regret_sum() const {
  double s = 0.0;
  for (double r : regrets) s += r;
  return s;
}

MetricsRecord MetricsRecord::from(const std::vector<double>& payments,
                                  const std::vector<double>& regrets,
                                  double r_max) {
  MetricsRecord rec;
  rec.payments = payments;
  rec.regrets = regrets;
  for (double p : payments) rec.revenue += p;
  for (double r : regrets) rec.regret_mean += r;
  double sum_r = rec.regret_mean;
  rec.regret_mean /= static_cast<double>(regrets.size());
  rec.ratio = rec.revenue > 0.0
                  ? (sum_r / rec.revenue) / r_max
                  : std::numeric_limits<double>::quiet_NaN();
  return rec;
}

Tensor inner_loss(int bidder, const Tensor& true_valuations,
                  const Tensor& misreported_bids, const Mechanism& net) {
  ForwardOutput out = net.forward(misreported_bids);
  Tensor u = utilities(out, true_valuations);           // [B, n]
  Tensor ui = slice(u, 1, bidder, 1);                    // [B, 1]
  return neg(sum_all(ui));
}

Tensor outer_loss_lagrangian(const Tensor& payments_mean,
                             const Tensor& regrets_mean,
                             const LagrangianState& state) {
  if (payments_mean.size() != static_cast<int64_t>(state.lambdas.size())) {
    throw ShapeError("outer_loss_lagrangian: lambda count mismatch");
  }
  Tensor lambdas = Tensor::from({payments_mean.size()},
                                std::vector<double>(state.lambdas));
  Tensor penalty = mul(lambdas, regrets_mean);
  Tensor quad = mul(mul(regrets_mean, regrets_mean), 0.5 * state.rho);
  return sum_all(add(add(neg(payments_mean), penalty), quad));
}

Tensor outer_loss_budget(const Tensor& payments_mean, const Tensor& regrets_mean,
                         double gamma) {
  // sum_i (-P_i + gamma R_i); elementwise association keeps this bit-identical
  // to the Lagrangian objective at lambda_i = gamma, rho = 0.
  return sum_all(add(neg(payments_mean), mul(regrets_mean, gamma)));
}

LagrangianState lagrangian_multiplier_update(const LagrangianState& state,
                                             const std::vector<double>& regrets) {
  if (regrets.size() != state.lambdas.size()) {
    throw std::invalid_argument("multiplier update: regret count mismatch");
  }
  LagrangianState next = state;
  for (size_t i = 0; i < regrets.size(); ++i) {
    next.lambdas[i] = state.lambdas[i] + state.rho * regrets[i];
  }
  next.rho = state.rho + state.rho_lr;
  return next;
}

DualState dual_update(const DualState& state, double sum_regret,
                      double sum_payment) {
  DualState next = state;
  if (!(sum_payment > 0.0)) return next;  // undefined ratio, skip
  double floored = std::max(sum_regret, 1e-12);
  double step = state.gamma_lr *
                (std::log(floored / sum_payment) - std::log(state.r_max));
  next.gamma = std::max(0.0, state.gamma + step);
  return next;
}

DualState budget_schedule_step(const DualState& state) {
  DualState next = state;
  next.r_max = std::max(state.r_max_end, state.r_max_mult * state.r_max);
  return next;
}

double budget_schedule_multiplier(double r_start, double r_end,
                                  int64_t schedule_steps) {
  if (r_start <= 0.0 || r_end <= 0.0 || r_end > r_start) {
    throw std::invalid_argument("budget schedule: need 0 < r_end <= r_start");
  }
  if (r_start == r_end) return 1.0;
  int64_t decay_steps = std::max<int64_t>(1, (2 * schedule_steps) / 3);
  return std::pow(r_end / r_start, 1.0 / static_cast<double>(decay_steps));
}

}  // namespace auctionlab
