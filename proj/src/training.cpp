#include "auctionlab/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <limits>
#include <stdexcept>
#include <thread>

namespace auctionlab {

void TrainConfig::validate() const {
  if (outer_iterations < 1 || batch_size < 1 || lr_outer <= 0.0 ||
      lr_inner <= 0.0 || inner_steps_train < 0 || inner_steps_valid < 0 ||
      dataset_size < 1 || valid_every < 1 || schedule_period < 1 ||
      workers < 1) {
    throw std::invalid_argument("train config: all counts/rates must be positive");
  }
  if (inner_steps_valid < inner_steps_train) {
    throw std::invalid_argument(
        "train config: inner_steps_valid must be >= inner_steps_train");
  }
}

// ---------------------------------------------------------------------------
// Adam

AdamOptimizer::AdamOptimizer(double lr_in, double beta1, double beta2, double eps)
    : lr(lr_in), beta1_(beta1), beta2_(beta2), eps_(eps) {}

void AdamOptimizer::reset() {
  t_ = 0;
  m_.clear();
  v_.clear();
}

void AdamOptimizer::restore(int64_t t, std::vector<std::vector<double>> m,
                            std::vector<std::vector<double>> v) {
  t_ = t;
  m_ = std::move(m);
  v_ = std::move(v);
}

void AdamOptimizer::step(std::vector<Tensor>& targets) {
  std::vector<const std::vector<double>*> grads;
  grads.reserve(targets.size());
  for (auto& t : targets) grads.push_back(&t.grad());
  step_with_grads(targets, grads);
}

void AdamOptimizer::step_with_grads(
    std::vector<Tensor>& targets,
    const std::vector<const std::vector<double>*>& grads) {
  if (m_.empty()) {
    m_.resize(targets.size());
    v_.resize(targets.size());
    for (size_t i = 0; i < targets.size(); ++i) {
      m_[i].assign(targets[i].values().size(), 0.0);
      v_[i].assign(targets[i].values().size(), 0.0);
    }
  }
  if (m_.size() != targets.size()) {
    throw std::invalid_argument("adam: target group count changed");
  }
  ++t_;
  double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  bool f32 = precision() == Precision::f32;
  for (size_t k = 0; k < targets.size(); ++k) {
    auto& x = targets[k].mutable_values();
    const auto& g = *grads[k];
    auto& m = m_[k];
    auto& v = v_[k];
    for (size_t i = 0; i < x.size(); ++i) {
      m[i] = beta1_ * m[i] + (1.0 - beta1_) * g[i];
      v[i] = beta2_ * v[i] + (1.0 - beta2_) * g[i] * g[i];
      double mhat = m[i] / bc1;
      double vhat = v[i] / bc2;
      x[i] -= lr * mhat / (std::sqrt(vhat) + eps_);
      if (f32) x[i] = static_cast<double>(static_cast<float>(x[i]));
    }
  }
}

// ---------------------------------------------------------------------------
// Misreport optimization

double MisreportResult::mean_regret(int bidder, int64_t batch, int n) const {
  double s = 0.0;
  for (int64_t l = 0; l < batch; ++l) {
    s += regrets[static_cast<size_t>(l * n + bidder)];
  }
  return s / static_cast<double>(batch);
}

namespace {

struct Chunk {
  int64_t start, count;
};

std::vector<Chunk> split(int64_t total, int workers) {
  int w = static_cast<int>(std::min<int64_t>(workers, std::max<int64_t>(total, 1)));
  std::vector<Chunk> chunks;
  int64_t base = total / w, rem = total % w, at = 0;
  for (int i = 0; i < w; ++i) {
    int64_t c = base + (i < rem ? 1 : 0);
    if (c > 0) chunks.push_back({at, c});
    at += c;
  }
  return chunks;
}

// Utility values of `bidder` for a value-only forward (no tape).
std::vector<double> utility_values(const Mechanism& net, const Tensor& bids,
                                   const Tensor& true_vals, int bidder) {
  ForwardOutput out = net.forward(bids);
  Tensor u = utilities(out, true_vals);
  int64_t b = u.dim(0), n = u.dim(1);
  std::vector<double> res(static_cast<size_t>(b));
  for (int64_t l = 0; l < b; ++l) {
    res[static_cast<size_t>(l)] = u.values()[static_cast<size_t>(l * n + bidder)];
  }
  return res;
}

}  // namespace

MisreportResult optimize_misreports(const Mechanism& net, const Tensor& bids,
                                    const SettingSpec& support, int steps,
                                    double lr, int workers, int n_active,
                                    int m_active) {
  int64_t batch = bids.dim(0);
  int frame_n = static_cast<int>(bids.dim(1));
  int frame_m = static_cast<int>(bids.dim(2));
  int n = n_active > 0 ? n_active : frame_n;
  int m = m_active > 0 ? m_active : frame_m;
  if (static_cast<size_t>(m) != support.lo.size()) {
    throw std::invalid_argument("optimize_misreports: support has wrong item count");
  }

  MisreportResult result;
  result.misreports = bids.detached();
  result.regrets.assign(static_cast<size_t>(batch * n), 0.0);
  result.truthful_utilities.assign(static_cast<size_t>(batch * n), 0.0);

  auto run_chunk = [&](Chunk c) {
    Tensor truth = slice(bids, 0, c.start, c.count).detached();

    // Truthful utilities for every active bidder of this chunk.
    {
      ForwardOutput out = net.forward(truth);
      Tensor u = utilities(out, truth);
      for (int64_t l = 0; l < c.count; ++l) {
        for (int i = 0; i < n; ++i) {
          result.truthful_utilities[static_cast<size_t>((c.start + l) * n + i)] =
              u.values()[static_cast<size_t>(l * frame_n + i)];
        }
      }
    }

    for (int bidder = 0; bidder < n; ++bidder) {
      // Misreport block [count, m], truthful init.
      std::vector<double> init(static_cast<size_t>(c.count * m));
      for (int64_t l = 0; l < c.count; ++l) {
        for (int j = 0; j < m; ++j) {
          init[static_cast<size_t>(l * m + j)] =
              truth.at({l, bidder, j});
        }
      }
      Tensor mis = Tensor::from({c.count, m}, init);
      mis.set_requires_grad(true);

      Tensor rows_above =
          bidder > 0 ? slice(truth, 1, 0, bidder) : Tensor();
      Tensor rows_below = bidder + 1 < frame_n
                              ? slice(truth, 1, bidder + 1, frame_n - bidder - 1)
                              : Tensor();
      Tensor pad_items = m < frame_m
                             ? Tensor::zeros({c.count, 1, frame_m - m})
                             : Tensor();

      std::vector<double> best_u(static_cast<size_t>(c.count));
      std::vector<double> best_mis = init;
      for (int64_t l = 0; l < c.count; ++l) {
        best_u[static_cast<size_t>(l)] =
            result
                .truthful_utilities[static_cast<size_t>((c.start + l) * n + bidder)];
      }

      auto assemble = [&](const Tensor& mis_block) {
        Tensor row = reshape(mis_block, {c.count, 1, m});
        if (pad_items.defined()) row = concat({row, pad_items}, 2);
        std::vector<Tensor> parts;
        if (rows_above.defined()) parts.push_back(rows_above);
        parts.push_back(row);
        if (rows_below.defined()) parts.push_back(rows_below);
        return parts.size() == 1 ? parts[0] : concat(parts, 1);
      };

      auto track_best = [&](const std::vector<double>& u,
                            const std::vector<double>& candidate) {
        for (int64_t l = 0; l < c.count; ++l) {
          if (u[static_cast<size_t>(l)] > best_u[static_cast<size_t>(l)]) {
            best_u[static_cast<size_t>(l)] = u[static_cast<size_t>(l)];
            std::copy_n(candidate.data() + l * m, m, best_mis.data() + l * m);
          }
        }
      };

      AdamOptimizer inner(lr);
      std::vector<Tensor> group{mis};
      for (int s = 0; s < steps; ++s) {
        Tape tape;
        Tensor ui;
        {
          TapeScope scope(tape);
          Tensor profile = assemble(mis);
          ForwardOutput out = net.forward(profile);
          Tensor u = utilities(out, truth);
          ui = slice(u, 1, bidder, 1);  // [count, 1]
          Tensor loss = neg(sum_all(ui));
          if (!loss.requires_grad()) {
            // Mechanism is constant in the misreport (e.g. a baseline):
            // nothing to ascend.
            break;
          }
          if (!std::isfinite(loss.item())) {
            throw NumericError("optimize_misreports: non-finite inner loss for bidder " +
                               std::to_string(bidder));
          }
          tape.backward(loss);
        }
        track_best(ui.values(), mis.values());
        inner.step(group);
        mis.zero_grad();
        auto& vals = mis.mutable_values();
        for (int64_t l = 0; l < c.count; ++l) {
          for (int j = 0; j < m; ++j) {
            double lo = support.lo[static_cast<size_t>(j)];
            double hi = support.hi[static_cast<size_t>(j)];
            double& x = vals[static_cast<size_t>(l * m + j)];
            x = std::clamp(x, lo, hi);
          }
        }
      }
      if (steps > 0) {
        // Score the final iterate as well.
        std::vector<double> u =
            utility_values(net, assemble(mis), truth, bidder);
        track_best(u, mis.values());
      }

      auto& out_vals = result.misreports.mutable_values();
      for (int64_t l = 0; l < c.count; ++l) {
        double truth_u =
            result
                .truthful_utilities[static_cast<size_t>((c.start + l) * n + bidder)];
        result.regrets[static_cast<size_t>((c.start + l) * n + bidder)] =
            best_u[static_cast<size_t>(l)] - truth_u;
        for (int j = 0; j < m; ++j) {
          out_vals[static_cast<size_t>(((c.start + l) * frame_n + bidder) * frame_m +
                                       j)] = best_mis[static_cast<size_t>(l * m + j)];
        }
      }
    }
  };

  auto chunks = split(batch, workers);
  if (chunks.size() <= 1) {
    for (auto& c : chunks) run_chunk(c);
  } else {
    std::vector<std::thread> pool;
    pool.reserve(chunks.size());
    for (auto& c : chunks) pool.emplace_back(run_chunk, c);
    for (auto& t : pool) t.join();
  }
  return result;
}

// ---------------------------------------------------------------------------
// Batching

Tensor pad_to_frame(const Tensor& bids, int frame_n, int frame_m) {
  int64_t b = bids.dim(0), n = bids.dim(1), m = bids.dim(2);
  if (n > frame_n || m > frame_m) {
    throw ShapeError("pad_to_frame: profile exceeds the frame");
  }
  if (n == frame_n && m == frame_m) return bids;
  std::vector<double> out(static_cast<size_t>(b * frame_n * frame_m), 0.0);
  for (int64_t l = 0; l < b; ++l) {
    for (int64_t i = 0; i < n; ++i) {
      for (int64_t j = 0; j < m; ++j) {
        out[static_cast<size_t>((l * frame_n + i) * frame_m + j)] =
            bids.values()[static_cast<size_t>((l * n + i) * m + j)];
      }
    }
  }
  return Tensor::from({b, frame_n, frame_m}, std::move(out));
}

BatchSource::BatchSource(MultiSettingSpec settings, int64_t dataset_size,
                         int batch_size, uint64_t seed, bool fresh,
                         std::optional<std::pair<int, int>> frame)
    : settings_(std::move(settings)),
      batch_size_(batch_size),
      fresh_(fresh),
      picker_(seed, 0xb0a7) {
  settings_.validate();
  int max_n = 0, max_m = 0;
  for (const auto& s : settings_.settings) {
    max_n = std::max(max_n, s.n);
    max_m = std::max(max_m, s.m);
  }
  frame_ = frame;
  if (frame_ && (frame_->first < max_n || frame_->second < max_m)) {
    throw std::invalid_argument("batch source: frame smaller than settings");
  }

  size_t count = settings_.settings.size();
  cursors_.assign(count, 0);
  for (size_t k = 0; k < count; ++k) {
    streams_.emplace_back(seed, 0x5a0 + k);
  }
  if (!fresh_) {
    int64_t per = std::max<int64_t>(dataset_size / static_cast<int64_t>(count),
                                    batch_size_);
    for (size_t k = 0; k < count; ++k) {
      datasets_.push_back(sample_profiles(settings_.settings[k], per, streams_[k]));
    }
  }
}

uint64_t BatchSource::picker_state() const { return picker_.state(); }
void BatchSource::restore_picker_state(uint64_t s) { picker_.restore(s); }

Batch BatchSource::next() {
  size_t k = settings_.settings.size() > 1
                 ? static_cast<size_t>(picker_.next_below(settings_.settings.size()))
                 : 0;
  const SettingSpec& spec = settings_.settings[k];

  Tensor bids;
  if (fresh_) {
    bids = sample_profiles(spec, batch_size_, streams_[k]);
  } else {
    const Tensor& data = datasets_[k];
    int64_t total = data.dim(0);
    int64_t at = cursors_[k];
    if (at + batch_size_ <= total) {
      bids = slice(data, 0, at, batch_size_);
      cursors_[k] = (at + batch_size_) % total;
    } else {
      Tensor head = slice(data, 0, at, total - at);
      Tensor tail = slice(data, 0, 0, batch_size_ - (total - at));
      bids = concat({head, tail}, 0);
      cursors_[k] = batch_size_ - (total - at);
    }
  }

  Batch batch;
  batch.spec = spec;
  batch.n_active = spec.n;
  batch.m_active = spec.m;
  batch.bids = frame_ ? pad_to_frame(bids, frame_->first, frame_->second) : bids;
  return batch;
}

// ---------------------------------------------------------------------------
// Outer step

MetricsRecord train_step(MechanismNetwork& net, const Batch& batch,
                         TrainState& state, AdamOptimizer& opt,
                         const TrainConfig& cfg) {
  const Tensor& bids = batch.bids;
  int n = batch.n_active;

  net.params().set_requires_grad(false);
  MisreportResult mis =
      optimize_misreports(net, bids, batch.spec, cfg.inner_steps_train,
                          cfg.lr_inner, cfg.workers, batch.n_active,
                          batch.m_active);

  net.params().set_requires_grad(true);
  net.params().zero_grads();
  Tape tape;
  std::vector<double> pay_values, regret_values;
  bool finite = true;
  {
    TapeScope scope(tape);
    ForwardOutput truth_out = net.forward(bids);
    Tensor u_truth = utilities(truth_out, bids);               // [B, frame_n]
    Tensor pay_active = slice(truth_out.payment, 1, 0, n);     // [B, n]
    Tensor payments_mean = reduce_mean(pay_active, 0);         // [n]

    std::vector<Tensor> regret_parts;
    regret_parts.reserve(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
      Tensor profile = bids.detached();
      {
        // Replace row i with the optimized misreports (constants here).
        auto& vals = profile.mutable_values();
        int64_t b = bids.dim(0);
        int64_t fn = bids.dim(1), fm = bids.dim(2);
        for (int64_t l = 0; l < b; ++l) {
          for (int64_t j = 0; j < fm; ++j) {
            vals[static_cast<size_t>((l * fn + i) * fm + j)] =
                mis.misreports.values()[static_cast<size_t>((l * fn + i) * fm + j)];
          }
        }
      }
      ForwardOutput mis_out = net.forward(profile);
      Tensor u_mis_i = slice(utilities(mis_out, bids), 1, i, 1);  // [B,1]
      Tensor u_truth_i = slice(u_truth, 1, i, 1);
      regret_parts.push_back(
          reshape(reduce_mean(sub(u_mis_i, u_truth_i), 0), {1}));
    }
    Tensor regrets_mean = regret_parts.size() == 1 ? regret_parts[0]
                                                   : concat(regret_parts, 0);

    Tensor loss;
    if (state.objective == Objective::budget) {
      loss = outer_loss_budget(payments_mean, regrets_mean, state.dual.gamma);
    } else {
      if (static_cast<int>(state.lagrangian.lambdas.size()) != n) {
        throw std::invalid_argument(
            "lagrangian objective: lambda count does not match bidders");
      }
      loss = outer_loss_lagrangian(payments_mean, regrets_mean, state.lagrangian);
    }
    pay_values = payments_mean.values();
    regret_values = regrets_mean.values();
    tape.backward(loss);
  }

  std::vector<Tensor> group;
  group.reserve(net.params().items().size());
  for (auto& it : net.params().items()) group.push_back(it.tensor);
  for (auto& t : group) {
    if (!t.has_grad()) continue;
    for (double g : t.grad()) {
      if (!std::isfinite(g)) {
        finite = false;
        break;
      }
    }
    if (!finite) break;
  }
  if (finite) {
    opt.step(group);
  } else {
    ++state.skipped_steps;
    std::fprintf(stderr, "train_step: non-finite gradient at iteration %lld, skipped\n",
                 static_cast<long long>(state.iteration));
  }
  net.params().zero_grads();

  double sum_p = 0.0, sum_r = 0.0;
  for (double p : pay_values) sum_p += p;
  for (double r : regret_values) sum_r += r;

  if (state.objective == Objective::budget) {
    state.dual = dual_update(state.dual, sum_r, sum_p);
  } else if (state.lagrangian.update_period > 0 &&
             (state.iteration + 1) % state.lagrangian.update_period == 0) {
    state.lagrangian = lagrangian_multiplier_update(state.lagrangian, regret_values);
  }
  ++state.iteration;

  double ratio_budget = state.objective == Objective::budget
                            ? state.dual.r_max
                            : std::numeric_limits<double>::quiet_NaN();
  return MetricsRecord::from(pay_values, regret_values, ratio_budget);
}

// ---------------------------------------------------------------------------
// Outer loop

TrainResult train(MechanismNetwork& net, BatchSource& source, TrainState state,
                  const TrainConfig& cfg, AdamOptimizer& opt,
                  const ValidationHook& validate,
                  const CheckpointHook& checkpoint) {
  cfg.validate();
  TrainResult result;
  auto t0 = std::chrono::steady_clock::now();

  auto stamp = [&](HistoryRow row, int64_t iter) {
    row.iteration = iter;
    if (state.objective == Objective::budget) {
      row.gamma = state.dual.gamma;
      row.r_max = state.dual.r_max;
    } else {
      row.gamma = std::numeric_limits<double>::quiet_NaN();
      row.r_max = std::numeric_limits<double>::quiet_NaN();
    }
    if (cfg.wall_clock) {
      row.wall_ms = std::chrono::duration<double, std::milli>(
                        std::chrono::steady_clock::now() - t0)
                        .count();
    } else {
      row.wall_ms = 0.0;
    }
    return row;
  };

  for (int64_t iter = state.iteration; iter < cfg.outer_iterations;) {
    Batch batch = source.next();
    train_step(net, batch, state, opt, cfg);
    iter = state.iteration;

    if (state.objective == Objective::budget && iter % cfg.schedule_period == 0) {
      state.dual = budget_schedule_step(state.dual);
    }

    bool last = iter == cfg.outer_iterations;
    if (iter % cfg.valid_every == 0 || last) {
      double budget = state.objective == Objective::budget
                          ? state.dual.r_max
                          : std::numeric_limits<double>::quiet_NaN();
      // Frozen during validation so the estimator never touches param grads.
      net.params().set_requires_grad(false);
      HistoryRow row = stamp(validate(net, iter, last, budget), iter);
      result.history.push_back(row);
      if (last) result.final_row = row;
      if (checkpoint) checkpoint(net, state, opt);
    } else if (cfg.checkpoint_every > 0 && iter % cfg.checkpoint_every == 0) {
      if (checkpoint) checkpoint(net, state, opt);
    }
  }
  result.state = state;
  return result;
}

}  // namespace auctionlab
