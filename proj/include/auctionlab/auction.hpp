#pragma once

// Auction semantics (utility, revenue, grid regret oracle) and the analytic
// DSIC baselines: VCG, Myerson item-wise, Myerson bundled.

#include <memory>
#include <vector>

#include "auctionlab/nets.hpp"
#include "auctionlab/sampling.hpp"
#include "auctionlab/tensor.hpp"

namespace auctionlab {

// A single profile of additive per-item valuations.
struct ValuationProfile {
  int n = 0;
  int m = 0;
  std::vector<double> values;  // row-major n x m, finite, >= 0

  double at(int bidder, int item) const {
    return values[static_cast<size_t>(bidder * m + item)];
  }
  double& at(int bidder, int item) {
    return values[static_cast<size_t>(bidder * m + item)];
  }
  void validate() const;

  static ValuationProfile from_tensor_row(const Tensor& batch, int64_t row);
};

struct MechanismOutcome {
  int n = 0;
  int m = 0;
  std::vector<double> allocation;  // n x m probabilities (no dummy row)
  std::vector<double> payments;    // n

  double alloc(int bidder, int item) const {
    return allocation[static_cast<size_t>(bidder * m + item)];
  }
};

double utility(int bidder, const ValuationProfile& v, const MechanismOutcome& o);
double revenue(const MechanismOutcome& o);

// Analytic baselines (ties broken toward the lowest bidder index).
MechanismOutcome vcg_run(const ValuationProfile& v);
MechanismOutcome myerson_itemwise_run(const ValuationProfile& v);  // U[0,1] reserve 1/2
MechanismOutcome myerson_bundled_run(const ValuationProfile& v);

// Distribution of a sum of m U[0,1] draws, tabulated; closed-form pieces for
// m <= 3, discrete convolution beyond. Virtual values are monotonized by a
// running max before inversion.
class IrwinHall {
 public:
  explicit IrwinHall(int m, int grid_points = 10001);

  int m() const { return m_; }
  double pdf(double t) const;
  double cdf(double t) const;
  double virtual_value(double t) const;
  double inverse_virtual(double phi) const;  // smallest t with phi(t) >= phi

  static const IrwinHall& cached(int m);

 private:
  int m_;
  double step_;
  std::vector<double> pdf_, cdf_, virt_;
};

// Max over a misreport grid (truth included) of the utility gain for bidder i.
// Non-negative by construction. grid_resolution points per item.
double exact_regret_oracle(const Mechanism& mech, const ValuationProfile& v,
                           int bidder, int grid_resolution,
                           const SettingSpec& support);
double exact_regret_oracle(const Mechanism& mech, const ValuationProfile& v,
                           int bidder, int grid_resolution);  // unit box

// Baselines wrapped as Mechanism so that the evaluation protocols apply to
// them unchanged. Their forward never joins the tape, so misreport gradients
// are identically zero (the true gradient almost everywhere).
class BaselineMechanism : public Mechanism {
 public:
  enum class Kind { vcg, myerson_itemwise, myerson_bundled };
  explicit BaselineMechanism(Kind kind) : kind_(kind) {}

  ForwardOutput forward(const Tensor& bids) const override;
  bool accepts(int n, int m) const override { return n >= 1 && m >= 1; }
  std::string name() const override;

  MechanismOutcome run(const ValuationProfile& v) const;

  static Kind kind_from_name(const std::string& name);

 private:
  Kind kind_;
};

// Graph-side helper: per-bidder utilities sum_j z_ij v_ij - p_i where the
// outcome came from (possibly misreported) bids but v holds true valuations.
Tensor utilities(const ForwardOutput& out, const Tensor& true_valuations);

}  // namespace auctionlab
