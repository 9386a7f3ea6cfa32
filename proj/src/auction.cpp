#include "auctionlab/auction.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <mutex>
#include <stdexcept>

namespace auctionlab {

void ValuationProfile::validate() const {
  if (n < 1 || m < 1 ||
      values.size() != static_cast<size_t>(n) * static_cast<size_t>(m)) {
    throw std::invalid_argument("valuation profile: bad dimensions");
  }
  for (double v : values) {
    if (!std::isfinite(v) || v < 0.0) {
      throw std::invalid_argument("valuation profile: entries must be finite and >= 0");
    }
  }
}

ValuationProfile ValuationProfile::from_tensor_row(const Tensor& batch,
                                                   int64_t row) {
  ValuationProfile p;
  p.n = static_cast<int>(batch.dim(1));
  p.m = static_cast<int>(batch.dim(2));
  size_t stride = static_cast<size_t>(p.n * p.m);
  auto begin = batch.values().begin() + static_cast<long>(row * stride);
  p.values.assign(begin, begin + static_cast<long>(stride));
  return p;
}

double utility(int bidder, const ValuationProfile& v, const MechanismOutcome& o) {
  double u = -o.payments[static_cast<size_t>(bidder)];
  for (int j = 0; j < v.m; ++j) u += o.alloc(bidder, j) * v.at(bidder, j);
  return u;
}

double revenue(const MechanismOutcome& o) {
  double r = 0.0;
  for (double p : o.payments) r += p;
  return r;
}

// ---------------------------------------------------------------------------
// VCG / Myerson item-wise

namespace {

// Highest bidder, ties to the lowest index; second value returned as well.
std::pair<int, double> top_and_second(const ValuationProfile& v, int item) {
  int winner = 0;
  double best = v.at(0, item);
  double second = 0.0;
  for (int i = 1; i < v.n; ++i) {
    double b = v.at(i, item);
    if (b > best) {
      second = best;
      best = b;
      winner = i;
    } else if (b > second) {
      second = b;
    }
  }
  return {winner, second};
}

}  // namespace

MechanismOutcome vcg_run(const ValuationProfile& v) {
  v.validate();
  MechanismOutcome o;
  o.n = v.n;
  o.m = v.m;
  o.allocation.assign(static_cast<size_t>(v.n) * v.m, 0.0);
  o.payments.assign(static_cast<size_t>(v.n), 0.0);
  for (int j = 0; j < v.m; ++j) {
    auto [winner, second] = top_and_second(v, j);
    o.allocation[static_cast<size_t>(winner * v.m + j)] = 1.0;
    o.payments[static_cast<size_t>(winner)] += second;  // 0 when n == 1
  }
  return o;
}

MechanismOutcome myerson_itemwise_run(const ValuationProfile& v) {
  v.validate();
  constexpr double kReserve = 0.5;  // optimal for U[0,1]
  MechanismOutcome o;
  o.n = v.n;
  o.m = v.m;
  o.allocation.assign(static_cast<size_t>(v.n) * v.m, 0.0);
  o.payments.assign(static_cast<size_t>(v.n), 0.0);
  for (int j = 0; j < v.m; ++j) {
    auto [winner, second] = top_and_second(v, j);
    if (v.at(winner, j) >= kReserve) {
      o.allocation[static_cast<size_t>(winner * v.m + j)] = 1.0;
      o.payments[static_cast<size_t>(winner)] += std::max(second, kReserve);
    }
  }
  return o;
}

// ---------------------------------------------------------------------------
// Irwin-Hall

namespace {

double binom(int n, int k) {
  double r = 1.0;
  for (int i = 1; i <= k; ++i) {
    r *= static_cast<double>(n - k + i) / static_cast<double>(i);
  }
  return r;
}

double ih_pdf_closed(int m, double x) {
  if (x <= 0.0 || x >= static_cast<double>(m)) return 0.0;
  switch (m) {
    case 1:
      return 1.0;
    case 2:
      return x <= 1.0 ? x : 2.0 - x;
    case 3: {
      if (x <= 1.0) return 0.5 * x * x;
      if (x <= 2.0) return 0.5 * (-2.0 * x * x + 6.0 * x - 3.0);
      return 0.5 * (3.0 - x) * (3.0 - x);
    }
    default:
      break;
  }
  return 0.0;
}

double ih_cdf_closed(int m, double x) {
  if (x <= 0.0) return 0.0;
  if (x >= static_cast<double>(m)) return 1.0;
  switch (m) {
    case 1:
      return x;
    case 2:
      return x <= 1.0 ? 0.5 * x * x : 1.0 - 0.5 * (2.0 - x) * (2.0 - x);
    case 3: {
      if (x <= 1.0) return x * x * x / 6.0;
      if (x <= 2.0) return (-2.0 * x * x * x + 9.0 * x * x - 9.0 * x + 3.0) / 6.0;
      double c = 3.0 - x;
      return 1.0 - c * c * c / 6.0;
    }
    default:
      break;
  }
  return 0.0;
}

}  // namespace

IrwinHall::IrwinHall(int m, int grid_points) : m_(m) {
  if (m < 1) throw std::invalid_argument("irwin-hall: m >= 1 required");
  if (grid_points < 3) throw std::invalid_argument("irwin-hall: grid too small");
  int64_t g = grid_points;
  step_ = static_cast<double>(m) / static_cast<double>(g - 1);
  pdf_.resize(static_cast<size_t>(g));
  cdf_.resize(static_cast<size_t>(g));

  if (m <= 3) {
    for (int64_t i = 0; i < g; ++i) {
      double x = static_cast<double>(i) * step_;
      pdf_[static_cast<size_t>(i)] = ih_pdf_closed(m, x);
      cdf_[static_cast<size_t>(i)] = ih_cdf_closed(m, x);
    }
  } else {
    // Repeated convolution with the U[0,1] density on the shared grid.
    int64_t unit = static_cast<int64_t>(std::llround(1.0 / step_));
    std::vector<double> cur(static_cast<size_t>(g), 0.0);
    for (int64_t i = 0; i <= unit && i < g; ++i) cur[static_cast<size_t>(i)] = 1.0;
    cur[0] = 0.5;
    cur[static_cast<size_t>(std::min(unit, g - 1))] *= 0.5;

    for (int k = 2; k <= m; ++k) {
      std::vector<double> next(static_cast<size_t>(g), 0.0);
      for (int64_t i = 0; i < g; ++i) {
        // integral of cur(x - u) du over [0, 1], trapezoid on the grid
        double s = 0.0;
        int64_t lo = std::max<int64_t>(0, i - unit);
        for (int64_t j = lo; j <= i; ++j) {
          double w = (j == lo || j == i) ? 0.5 : 1.0;
          s += w * cur[static_cast<size_t>(j)];
        }
        next[static_cast<size_t>(i)] = s * step_;
      }
      cur = std::move(next);
    }
    pdf_ = cur;
    cdf_[0] = 0.0;
    for (int64_t i = 1; i < g; ++i) {
      cdf_[static_cast<size_t>(i)] =
          cdf_[static_cast<size_t>(i - 1)] +
          0.5 * (pdf_[static_cast<size_t>(i - 1)] + pdf_[static_cast<size_t>(i)]) * step_;
    }
    double total = cdf_.back();
    for (double& c : cdf_) c /= total;  // renormalize quadrature drift
    for (double& p : pdf_) p /= total;
  }

  // phi(t) = t - (1 - F) / f, monotonized by running max. Zero-density edges
  // inherit their neighbors through the running max.
  virt_.resize(pdf_.size());
  double run = -1e30;
  for (size_t i = 0; i < pdf_.size(); ++i) {
    double t = static_cast<double>(i) * step_;
    double f = pdf_[i];
    double phi;
    if (f <= 1e-12) {
      phi = (cdf_[i] >= 1.0 - 1e-12) ? t : -1e30;
    } else {
      phi = t - (1.0 - cdf_[i]) / f;
    }
    run = std::max(run, phi);
    virt_[i] = run;
  }
}

double IrwinHall::pdf(double t) const {
  if (t < 0.0 || t > static_cast<double>(m_)) {
    throw std::out_of_range("irwin-hall: value outside [0, m]");
  }
  double x = t / step_;
  auto i = static_cast<size_t>(std::min<double>(x, static_cast<double>(pdf_.size() - 2)));
  double frac = x - static_cast<double>(i);
  return pdf_[i] * (1.0 - frac) + pdf_[i + 1] * frac;
}

double IrwinHall::cdf(double t) const {
  if (t < 0.0 || t > static_cast<double>(m_)) {
    throw std::out_of_range("irwin-hall: value outside [0, m]");
  }
  double x = t / step_;
  auto i = static_cast<size_t>(std::min<double>(x, static_cast<double>(cdf_.size() - 2)));
  double frac = x - static_cast<double>(i);
  return cdf_[i] * (1.0 - frac) + cdf_[i + 1] * frac;
}

double IrwinHall::virtual_value(double t) const {
  if (t < 0.0 || t > static_cast<double>(m_)) {
    throw std::out_of_range("irwin-hall: value outside [0, m]");
  }
  double x = t / step_;
  auto i = static_cast<size_t>(std::min<double>(x, static_cast<double>(virt_.size() - 2)));
  double frac = x - static_cast<double>(i);
  double a = virt_[i], b = virt_[i + 1];
  if (a <= -1e29) return b <= -1e29 ? a : b;
  return a * (1.0 - frac) + b * frac;
}

double IrwinHall::inverse_virtual(double phi) const {
  auto it = std::lower_bound(virt_.begin(), virt_.end(), phi);
  if (it == virt_.end()) return static_cast<double>(m_);
  size_t i = static_cast<size_t>(it - virt_.begin());
  if (i == 0) return 0.0;
  double a = virt_[i - 1], b = virt_[i];
  double t0 = static_cast<double>(i - 1) * step_;
  if (b <= a || a <= -1e29) return static_cast<double>(i) * step_;
  double frac = (phi - a) / (b - a);
  return t0 + step_ * std::clamp(frac, 0.0, 1.0);
}

const IrwinHall& IrwinHall::cached(int m) {
  static std::mutex mu;
  static std::map<int, std::unique_ptr<IrwinHall>> tables;
  std::lock_guard<std::mutex> lock(mu);
  auto& slot = tables[m];
  if (!slot) slot = std::make_unique<IrwinHall>(m);
  return *slot;
}

MechanismOutcome myerson_bundled_run(const ValuationProfile& v) {
  v.validate();
  const IrwinHall& table = IrwinHall::cached(v.m);

  MechanismOutcome o;
  o.n = v.n;
  o.m = v.m;
  o.allocation.assign(static_cast<size_t>(v.n) * v.m, 0.0);
  o.payments.assign(static_cast<size_t>(v.n), 0.0);

  std::vector<double> bundle(static_cast<size_t>(v.n), 0.0);
  for (int i = 0; i < v.n; ++i) {
    for (int j = 0; j < v.m; ++j) bundle[static_cast<size_t>(i)] += v.at(i, j);
  }

  int winner = 0;
  double best_phi = table.virtual_value(bundle[0]);
  double second_phi = -1e30;
  for (int i = 1; i < v.n; ++i) {
    double phi = table.virtual_value(bundle[static_cast<size_t>(i)]);
    if (phi > best_phi) {
      second_phi = best_phi;
      best_phi = phi;
      winner = i;
    } else if (phi > second_phi) {
      second_phi = phi;
    }
  }
  if (best_phi > 0.0) {
    double threshold = table.inverse_virtual(std::max(0.0, second_phi));
    for (int j = 0; j < v.m; ++j) {
      o.allocation[static_cast<size_t>(winner * v.m + j)] = 1.0;
    }
    o.payments[static_cast<size_t>(winner)] =
        std::min(threshold, bundle[static_cast<size_t>(winner)]);
  }
  return o;
}

// ---------------------------------------------------------------------------
// Baselines as Mechanism

ForwardOutput BaselineMechanism::forward(const Tensor& bids) const {
  if (bids.rank() != 3) {
    throw ShapeError("baseline forward: bids must be [batch, n, m]");
  }
  int64_t b = bids.dim(0), n = bids.dim(1), m = bids.dim(2);
  std::vector<double> alloc(static_cast<size_t>(b * (n + 1) * m), 0.0);
  std::vector<double> fractions(static_cast<size_t>(b * n), 0.0);
  std::vector<double> payments(static_cast<size_t>(b * n), 0.0);

  for (int64_t l = 0; l < b; ++l) {
    ValuationProfile p = ValuationProfile::from_tensor_row(bids, l);
    MechanismOutcome out = run(p);
    for (int i = 0; i < p.n; ++i) {
      double expected = 0.0;
      for (int j = 0; j < p.m; ++j) {
        double z = out.alloc(i, j);
        alloc[static_cast<size_t>((l * (n + 1) + i) * m + j)] = z;
        expected += z * p.at(i, j);
      }
      double pay = out.payments[static_cast<size_t>(i)];
      payments[static_cast<size_t>(l * n + i)] = pay;
      fractions[static_cast<size_t>(l * n + i)] =
          expected > 0.0 ? std::clamp(pay / expected, 0.0, 1.0) : 0.0;
    }
    // dummy row takes whatever probability is unallocated
    for (int j = 0; j < p.m; ++j) {
      double used = 0.0;
      for (int i = 0; i < p.n; ++i) used += out.alloc(i, j);
      alloc[static_cast<size_t>((l * (n + 1) + n) * m + j)] = 1.0 - used;
    }
  }

  ForwardOutput out;
  out.allocation = Tensor::from({b, n + 1, m}, std::move(alloc));
  out.payment_fraction = Tensor::from({b, n}, std::move(fractions));
  out.payment = Tensor::from({b, n}, std::move(payments));
  return out;
}

MechanismOutcome BaselineMechanism::run(const ValuationProfile& v) const {
  switch (kind_) {
    case Kind::vcg:
      return vcg_run(v);
    case Kind::myerson_itemwise:
      return myerson_itemwise_run(v);
    case Kind::myerson_bundled:
      return myerson_bundled_run(v);
  }
  throw std::logic_error("unreachable");
}

std::string BaselineMechanism::name() const {
  switch (kind_) {
    case Kind::vcg:
      return "vcg";
    case Kind::myerson_itemwise:
      return "myerson-itemwise";
    case Kind::myerson_bundled:
      return "myerson-bundled";
  }
  return "?";
}

BaselineMechanism::Kind BaselineMechanism::kind_from_name(const std::string& name) {
  if (name == "vcg") return Kind::vcg;
  if (name == "myerson-itemwise") return Kind::myerson_itemwise;
  if (name == "myerson-bundled") return Kind::myerson_bundled;
  throw std::invalid_argument("unknown baseline mechanism: " + name);
}

// ---------------------------------------------------------------------------
// Grid oracle

double exact_regret_oracle(const Mechanism& mech, const ValuationProfile& v,
                           int bidder, int grid_resolution,
                           const SettingSpec& support) {
  v.validate();
  if (bidder < 0 || bidder >= v.n) {
    throw std::invalid_argument("exact_regret_oracle: bad bidder index");
  }
  if (grid_resolution < 1) {
    throw std::invalid_argument("exact_regret_oracle: grid resolution < 1");
  }
  double cells = std::pow(static_cast<double>(grid_resolution), v.m);
  if (cells > 140000.0) {
    throw std::invalid_argument(
        "exact_regret_oracle: grid^m too large (" + std::to_string(cells) + ")");
  }
  int64_t total = static_cast<int64_t>(cells) + 1;  // + truthful point

  std::vector<double> bids(static_cast<size_t>(total * v.n * v.m));
  std::vector<int> idx(static_cast<size_t>(v.m), 0);
  for (int64_t g = 0; g < total; ++g) {
    for (int i = 0; i < v.n; ++i) {
      for (int j = 0; j < v.m; ++j) {
        double val;
        if (i != bidder || g == total - 1) {
          val = v.at(i, j);  // others bid truthfully; last row is truth itself
        } else {
          double lo = support.lo[static_cast<size_t>(j)];
          double hi = support.hi[static_cast<size_t>(j)];
          val = grid_resolution == 1
                    ? lo
                    : lo + (hi - lo) * static_cast<double>(idx[static_cast<size_t>(j)]) /
                          static_cast<double>(grid_resolution - 1);
        }
        bids[static_cast<size_t>((g * v.n + i) * v.m + j)] = val;
      }
    }
    if (g < total - 1) {
      for (int j = v.m - 1; j >= 0; --j) {
        if (++idx[static_cast<size_t>(j)] < grid_resolution) break;
        idx[static_cast<size_t>(j)] = 0;
      }
    }
  }

  ForwardOutput out = mech.forward(
      Tensor::from({total, v.n, v.m}, std::move(bids)));

  // Utility of `bidder` under true valuations at each grid point.
  double truth_u = 0.0;
  double best_u = -1e300;
  const auto& z = out.allocation.values();
  const auto& pay = out.payment.values();
  int64_t zrow = (v.n + 1) * v.m;
  for (int64_t g = 0; g < total; ++g) {
    double u = -pay[static_cast<size_t>(g * v.n + bidder)];
    for (int j = 0; j < v.m; ++j) {
      u += z[static_cast<size_t>(g * zrow + bidder * v.m + j)] * v.at(bidder, j);
    }
    if (g == total - 1) truth_u = u;
    best_u = std::max(best_u, u);
  }
  return best_u - truth_u;
}

double exact_regret_oracle(const Mechanism& mech, const ValuationProfile& v,
                           int bidder, int grid_resolution) {
  return exact_regret_oracle(mech, v, bidder, grid_resolution,
                             SettingSpec::uniform01(v.n, v.m));
}

// ---------------------------------------------------------------------------

Tensor utilities(const ForwardOutput& out, const Tensor& true_valuations) {
  int64_t n = true_valuations.dim(1);
  Tensor z = slice(out.allocation, 1, 0, n);
  Tensor value = reduce_sum(mul(z, true_valuations), 2);  // [B, n]
  return sub(value, out.payment);
}

}  // namespace auctionlab
