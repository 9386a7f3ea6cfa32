#include "auctionlab/validation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace auctionlab {

namespace {

// Per-bidder batch-mean regret of `target` at fixed misreports, computed by
// value-only forwards (the shared path behind evaluate and cross-misreport).
std::vector<double> regret_at_misreports(const Mechanism& target,
                                         const Tensor& profiles,
                                         const Tensor& misreports, int n_active) {
  int64_t b = profiles.dim(0);
  int64_t fn = profiles.dim(1), fm = profiles.dim(2);

  ForwardOutput truth_out = target.forward(profiles);
  Tensor u_truth = utilities(truth_out, profiles);

  std::vector<double> result(static_cast<size_t>(n_active), 0.0);
  for (int i = 0; i < n_active; ++i) {
    Tensor profile = profiles.detached();
    auto& vals = profile.mutable_values();
    for (int64_t l = 0; l < b; ++l) {
      for (int64_t j = 0; j < fm; ++j) {
        vals[static_cast<size_t>((l * fn + i) * fm + j)] =
            misreports.values()[static_cast<size_t>((l * fn + i) * fm + j)];
      }
    }
    ForwardOutput mis_out = target.forward(profile);
    Tensor u_mis = utilities(mis_out, profiles);
    double acc = 0.0;
    for (int64_t l = 0; l < b; ++l) {
      acc += u_mis.values()[static_cast<size_t>(l * fn + i)] -
             u_truth.values()[static_cast<size_t>(l * fn + i)];
    }
    result[static_cast<size_t>(i)] = acc / static_cast<double>(b);
  }
  return result;
}

}  // namespace

EvaluationReport evaluate_mechanism(const Mechanism& mech,
                                    const SettingSpec& setting,
                                    const Tensor& profiles, int inner_steps,
                                    double r_max, const EvalOptions& opts) {
  if (profiles.dim(1) != setting.n || profiles.dim(2) != setting.m) {
    throw ShapeError("evaluate_mechanism: profiles do not match the setting");
  }
  Tensor bids = profiles;
  if (opts.pad_frame) {
    bids = pad_to_frame(profiles, opts.pad_frame->first, opts.pad_frame->second);
  }
  int frame_n = static_cast<int>(bids.dim(1));
  int frame_m = static_cast<int>(bids.dim(2));
  if (!mech.accepts(frame_n, frame_m)) {
    throw ShapeError("evaluate_mechanism: " + mech.name() +
                     " does not accept setting " + std::to_string(setting.n) +
                     "x" + std::to_string(setting.m));
  }
  int64_t b = bids.dim(0);
  int n = setting.n;

  MisreportResult mis =
      optimize_misreports(mech, bids, setting, inner_steps, opts.lr_inner,
                          opts.workers, setting.n, setting.m);

  EvaluationReport report;
  report.setting = setting.label;
  report.samples = b;
  report.inner_steps = inner_steps;
  report.per_bidder_regret = regret_at_misreports(mech, bids, mis.misreports, n);

  ForwardOutput out = mech.forward(bids);
  report.per_bidder_payment.assign(static_cast<size_t>(n), 0.0);
  for (int64_t l = 0; l < b; ++l) {
    for (int i = 0; i < n; ++i) {
      report.per_bidder_payment[static_cast<size_t>(i)] +=
          out.payment.values()[static_cast<size_t>(l * frame_n + i)];
    }
  }
  for (int i = 0; i < n; ++i) {
    report.per_bidder_payment[static_cast<size_t>(i)] /= static_cast<double>(b);
    report.revenue += report.per_bidder_payment[static_cast<size_t>(i)];
    report.regret_sum += report.per_bidder_regret[static_cast<size_t>(i)];
  }
  report.regret_mean = report.regret_sum / static_cast<double>(n);
  report.ratio = budget_ratio(report, r_max);
  return report;
}

double budget_ratio(const EvaluationReport& report, double r_max) {
  if (!(report.revenue > 0.0)) {
    return std::numeric_limits<double>::quiet_NaN();
  }
  return (report.regret_sum / report.revenue) / r_max;
}

CrossMisreportReport cross_misreport_regret(const Mechanism& target,
                                            const Mechanism& prober,
                                            const SettingSpec& setting,
                                            const Tensor& profiles,
                                            int inner_steps, double lr_inner,
                                            int workers) {
  if (!target.accepts(setting.n, setting.m) ||
      !prober.accepts(setting.n, setting.m)) {
    throw ShapeError("cross_misreport_regret: mechanism rejects setting " +
                     std::to_string(setting.n) + "x" + std::to_string(setting.m));
  }
  MisreportResult mis = optimize_misreports(prober, profiles, setting,
                                            inner_steps, lr_inner, workers);
  CrossMisreportReport report;
  report.per_bidder =
      regret_at_misreports(target, profiles, mis.misreports, setting.n);
  for (double r : report.per_bidder) report.mean += r;
  report.mean /= static_cast<double>(report.per_bidder.size());
  return report;
}

// ---------------------------------------------------------------------------
// Distillation

Tensor distillation_loss(const ForwardOutput& teacher, const ForwardOutput& student) {
  int64_t b = teacher.allocation.dim(0);
  double inv_b = 1.0 / static_cast<double>(b);

  // Allocation categoricals over n+1 outcomes per item.
  Tensor zt = teacher.allocation;
  Tensor zs = student.allocation;
  Tensor log_t = log(maximum(zt, Tensor::scalar(1e-30)));
  Tensor log_s = log(maximum(zs, Tensor::scalar(1e-30)));
  Tensor alloc_kl = mul(sum_all(mul(zt, sub(log_t, log_s))), inv_b);

  // Bernoulli payment fractions, clamped per the 1e-7 convention.
  auto clamp01 = [](const Tensor& p) {
    return minimum(maximum(p, Tensor::scalar(1e-7)), Tensor::scalar(1.0 - 1e-7));
  };
  Tensor pt = clamp01(teacher.payment_fraction);
  Tensor ps = clamp01(student.payment_fraction);
  Tensor one = Tensor::scalar(1.0);
  Tensor qt = sub(one, pt);
  Tensor qs = sub(one, ps);
  Tensor pay_kl = mul(sum_all(add(mul(pt, sub(log(pt), log(ps))),
                                  mul(qt, sub(log(qt), log(qs))))),
                      inv_b);
  return add(alloc_kl, pay_kl);
}

DistillReport distill(const MechanismNetwork& teacher, MechanismNetwork& student,
                      const SettingSpec& setting, const DistillConfig& cfg) {
  if (!teacher.accepts(setting.n, setting.m) ||
      !student.accepts(setting.n, setting.m)) {
    throw ShapeError("distill: architecture rejects the setting");
  }
  for (const auto& p : teacher.params().items()) {
    if (p.tensor.requires_grad()) {
      throw std::invalid_argument("distill: teacher must be frozen");
    }
  }

  SeededStream data_stream(cfg.seed, 0xd157);
  AdamOptimizer opt(cfg.lr);
  int n = setting.n;

  for (int64_t it = 0; it < cfg.iterations; ++it) {
    Tensor bids = sample_profiles(setting, cfg.batch_size, data_stream);

    student.params().set_requires_grad(false);
    MisreportResult mis = optimize_misreports(student, bids, setting,
                                              cfg.inner_steps, 0.1, cfg.workers);
    student.params().set_requires_grad(true);

    Tape tape;
    {
      TapeScope scope(tape);
      Tensor loss = distillation_loss(teacher.forward(bids), student.forward(bids));
      for (int i = 0; i < n; ++i) {
        Tensor profile = bids.detached();
        auto& vals = profile.mutable_values();
        int64_t fn = bids.dim(1), fm = bids.dim(2);
        for (int64_t l = 0; l < cfg.batch_size; ++l) {
          for (int64_t j = 0; j < fm; ++j) {
            vals[static_cast<size_t>((l * fn + i) * fm + j)] =
                mis.misreports.values()[static_cast<size_t>((l * fn + i) * fm + j)];
          }
        }
        loss = add(loss, mul(distillation_loss(teacher.forward(profile),
                                               student.forward(profile)),
                             1.0 / static_cast<double>(n)));
      }
      if (!std::isfinite(loss.item())) {
        throw NumericError("distill: diverged at iteration " + std::to_string(it));
      }
      tape.backward(loss);
    }
    std::vector<Tensor> group;
    for (auto& p : student.params().items()) group.push_back(p.tensor);
    opt.step(group);
    student.params().zero_grads();
  }
  student.params().set_requires_grad(false);

  // Final report: revenues, the 2x2 regret table, and the truth-point KL.
  SeededStream eval_stream(cfg.seed, 0xe7a1);
  Tensor eval = sample_profiles(setting, cfg.eval_profiles, eval_stream);

  DistillReport report;
  MisreportResult mis_t = optimize_misreports(teacher, eval, setting,
                                              cfg.eval_inner_steps, 0.1, cfg.workers);
  MisreportResult mis_s = optimize_misreports(student, eval, setting,
                                              cfg.eval_inner_steps, 0.1, cfg.workers);

  auto mean_of = [&](const std::vector<double>& per_bidder) {
    double s = 0.0;
    for (double r : per_bidder) s += r;
    return s / static_cast<double>(per_bidder.size());
  };
  report.regret[0][0] =
      mean_of(regret_at_misreports(teacher, eval, mis_t.misreports, n));
  report.regret[0][1] =
      mean_of(regret_at_misreports(teacher, eval, mis_s.misreports, n));
  report.regret[1][0] =
      mean_of(regret_at_misreports(student, eval, mis_t.misreports, n));
  report.regret[1][1] =
      mean_of(regret_at_misreports(student, eval, mis_s.misreports, n));

  auto revenue_of = [&](const Mechanism& mech) {
    ForwardOutput out = mech.forward(eval);
    double acc = 0.0;
    for (double p : out.payment.values()) acc += p;
    return acc / static_cast<double>(cfg.eval_profiles);
  };
  report.teacher_revenue = revenue_of(teacher);
  report.student_revenue = revenue_of(student);
  report.final_kl =
      distillation_loss(teacher.forward(eval), student.forward(eval)).item();
  return report;
}

}  // namespace auctionlab
