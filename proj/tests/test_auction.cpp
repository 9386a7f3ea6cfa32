#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "auctionlab/auction.hpp"
#include "auctionlab/experiment.hpp"

using namespace auctionlab;

namespace {

ValuationProfile profile_of(int n, int m, std::vector<double> v) {
  ValuationProfile p;
  p.n = n;
  p.m = m;
  p.values = std::move(v);
  p.validate();
  return p;
}

ValuationProfile random_profile(int n, int m, SeededStream& rng) {
  ValuationProfile p;
  p.n = n;
  p.m = m;
  p.values.resize(static_cast<size_t>(n * m));
  for (double& x : p.values) x = rng.next_unit();
  return p;
}

}  // namespace

TEST_CASE("utility and revenue arithmetic") {
  ValuationProfile v = profile_of(1, 2, {0.8, 0.3});
  MechanismOutcome o;
  o.n = 1;
  o.m = 2;
  o.allocation = {1.0, 0.0};
  o.payments = {0.4};
  CHECK(utility(0, v, o) == doctest::Approx(0.4));
  CHECK(revenue(o) == doctest::Approx(0.4));

  o.allocation = {0.0, 0.0};
  o.payments = {0.0};
  CHECK(utility(0, v, o) == 0.0);
  CHECK(revenue(o) == 0.0);

  o.allocation = {1.0, 1.0};
  o.payments = {1.1};
  CHECK(utility(0, v, o) == doctest::Approx(0.0));
}

TEST_CASE("vcg second-price per item") {
  ValuationProfile v = profile_of(2, 1, {0.7, 0.4});
  MechanismOutcome o = vcg_run(v);
  CHECK(o.alloc(0, 0) == 1.0);
  CHECK(o.alloc(1, 0) == 0.0);
  CHECK(o.payments[0] == doctest::Approx(0.4));
  CHECK(o.payments[1] == 0.0);

  // single bidder pays nothing
  ValuationProfile solo = profile_of(1, 2, {0.9, 0.1});
  MechanismOutcome so = vcg_run(solo);
  CHECK(revenue(so) == 0.0);
  CHECK(so.alloc(0, 0) == 1.0);
  CHECK(so.alloc(0, 1) == 1.0);
}

TEST_CASE("myerson item-wise respects the reserve") {
  ValuationProfile v = profile_of(2, 1, {0.4, 0.3});
  MechanismOutcome o = myerson_itemwise_run(v);
  CHECK(o.alloc(0, 0) == 0.0);
  CHECK(o.alloc(1, 0) == 0.0);
  CHECK(revenue(o) == 0.0);

  ValuationProfile w = profile_of(2, 1, {0.9, 0.3});
  MechanismOutcome ow = myerson_itemwise_run(w);
  CHECK(ow.alloc(0, 0) == 1.0);
  CHECK(ow.payments[0] == doctest::Approx(0.5));  // max(second, reserve)

  ValuationProfile u = profile_of(2, 1, {0.9, 0.7});
  CHECK(myerson_itemwise_run(u).payments[0] == doctest::Approx(0.7));
}

TEST_CASE("irwin-hall closed forms and tails") {
  IrwinHall two(2);
  CHECK(two.cdf(0.0) == 0.0);
  CHECK(two.cdf(2.0) == doctest::Approx(1.0));
  CHECK(two.cdf(1.0) == doctest::Approx(0.5));
  CHECK(two.pdf(1.0) == doctest::Approx(1.0));
  CHECK(two.pdf(0.5) == doctest::Approx(0.5));

  // m=2 posted price: phi(sqrt(2/3)) == 0
  double r = std::sqrt(2.0 / 3.0);
  CHECK(two.virtual_value(r) == doctest::Approx(0.0).epsilon(1e-3));
  CHECK(two.inverse_virtual(0.0) == doctest::Approx(r).epsilon(1e-3));

  CHECK_THROWS_AS(two.cdf(2.5), std::out_of_range);

  // convolution path: midpoint symmetry within quadrature error
  IrwinHall four(4);
  CHECK(std::abs(four.cdf(2.0) - 0.5) <= 1e-4);

  IrwinHall three(3);
  CHECK(three.cdf(1.5) == doctest::Approx(0.5));
  CHECK(three.pdf(1.5) == doctest::Approx(0.75));
}

TEST_CASE("myerson bundled: posted price for a single bidder") {
  double r = std::sqrt(2.0 / 3.0);
  ValuationProfile above = profile_of(1, 2, {0.5, 0.45});  // bundle 0.95 > r
  MechanismOutcome o = myerson_bundled_run(above);
  CHECK(o.alloc(0, 0) == 1.0);
  CHECK(o.alloc(0, 1) == 1.0);
  CHECK(o.payments[0] == doctest::Approx(r).epsilon(1e-3));

  ValuationProfile below = profile_of(1, 2, {0.3, 0.3});  // bundle 0.6 < r
  MechanismOutcome ob = myerson_bundled_run(below);
  CHECK(revenue(ob) == 0.0);
  CHECK(ob.alloc(0, 0) == 0.0);
}

TEST_CASE("myerson bundled: virtual-value comparison decides the winner") {
  const IrwinHall& table = IrwinHall::cached(2);
  ValuationProfile v = profile_of(2, 2, {0.95, 0.95, 0.05, 0.05});
  MechanismOutcome o = myerson_bundled_run(v);
  bool bidder0_wins = table.virtual_value(1.9) > std::max(table.virtual_value(0.1), 0.0);
  CHECK(bidder0_wins);
  CHECK(o.alloc(0, 0) == 1.0);
  CHECK(o.alloc(0, 1) == 1.0);
  CHECK(o.alloc(1, 0) == 0.0);
  CHECK(o.payments[1] == 0.0);
}

TEST_CASE("baseline IR is exact and monotone in own bid") {
  SeededStream rng(77);
  for (int rep = 0; rep < 200; ++rep) {
    ValuationProfile v = random_profile(3, 2, rng);
    for (auto kind : {BaselineMechanism::Kind::vcg,
                      BaselineMechanism::Kind::myerson_itemwise,
                      BaselineMechanism::Kind::myerson_bundled}) {
      BaselineMechanism mech(kind);
      MechanismOutcome o = mech.run(v);
      for (int i = 0; i < 3; ++i) CHECK(utility(i, v, o) >= 0.0);

      // raising one bid never lowers that bidder's allocation
      ValuationProfile up = v;
      int bidder = rep % 3, item = rep % 2;
      up.at(bidder, item) = std::min(1.0, up.at(bidder, item) + 0.2);
      MechanismOutcome ou = mech.run(up);
      double before = 0.0, after = 0.0;
      for (int j = 0; j < 2; ++j) {
        before += o.alloc(bidder, j);
        after += ou.alloc(bidder, j);
      }
      CHECK(after >= before - 1e-12);
    }
  }
}

TEST_CASE("oracle: grid with a single point returns zero") {
  BaselineMechanism vcg(BaselineMechanism::Kind::vcg);
  ValuationProfile v = profile_of(2, 2, {0.3, 0.8, 0.5, 0.1});
  CHECK(exact_regret_oracle(vcg, v, 0, 1) >= 0.0);
  CHECK(exact_regret_oracle(vcg, v, 0, 1) <= 1e-12);
}

TEST_CASE("oracle: constant mechanisms have zero regret") {
  struct ConstantMechanism : Mechanism {
    ForwardOutput forward(const Tensor& bids) const override {
      int64_t b = bids.dim(0), n = bids.dim(1), m = bids.dim(2);
      ForwardOutput out;
      out.allocation = Tensor::full({b, n + 1, m}, 1.0 / static_cast<double>(n + 1));
      out.payment_fraction = Tensor::zeros({b, n});
      out.payment = Tensor::zeros({b, n});
      return out;
    }
    bool accepts(int, int) const override { return true; }
    std::string name() const override { return "constant"; }
  };
  ConstantMechanism mech;
  ValuationProfile v = profile_of(2, 2, {0.3, 0.8, 0.5, 0.1});
  CHECK(exact_regret_oracle(mech, v, 0, 11) == 0.0);
  CHECK(exact_regret_oracle(mech, v, 1, 11) == 0.0);
}

TEST_CASE("oracle: DSIC baselines show at most grid-step regret") {
  SeededStream rng(99);
  for (auto kind : {BaselineMechanism::Kind::vcg,
                    BaselineMechanism::Kind::myerson_itemwise,
                    BaselineMechanism::Kind::myerson_bundled}) {
    BaselineMechanism mech(kind);
    for (int rep = 0; rep < 25; ++rep) {
      ValuationProfile v = random_profile(2, 2, rng);
      int bidder = rep % 2;
      double regret = exact_regret_oracle(mech, v, bidder, 21);
      CHECK(regret >= 0.0);
      CHECK(regret <= 2.0 * (1.0 / 20.0));
    }
  }
}

TEST_CASE("oracle: grid-size guard") {
  BaselineMechanism vcg(BaselineMechanism::Kind::vcg);
  ValuationProfile v = profile_of(1, 4, {0.1, 0.2, 0.3, 0.4});
  CHECK_THROWS_AS(exact_regret_oracle(vcg, v, 0, 51), std::invalid_argument);
}

TEST_CASE("baseline monte-carlo revenues at desk precision") {
  // 100k samples keep this fast; the acceptance suite runs the 1e6 version.
  auto run = [](BaselineMechanism::Kind kind, int n, int m) {
    return run_baseline(kind, SettingSpec::uniform01(n, m), 100000, 5).revenue_mean;
  };
  CHECK(run(BaselineMechanism::Kind::vcg, 1, 2) == 0.0);
  CHECK(run(BaselineMechanism::Kind::vcg, 2, 2) == doctest::Approx(2.0 / 3.0).epsilon(0.02));
  CHECK(run(BaselineMechanism::Kind::myerson_itemwise, 1, 2) ==
        doctest::Approx(0.5).epsilon(0.02));
  CHECK(run(BaselineMechanism::Kind::myerson_bundled, 1, 2) ==
        doctest::Approx(0.544).epsilon(0.02));
}
