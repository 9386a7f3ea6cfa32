#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "auctionlab/validation.hpp"

using namespace auctionlab;

namespace {

MechanismNetwork small_net(uint64_t seed, Arch arch, int n, int m,
                           int hidden = 8) {
  NetConfig cfg = default_net_config(arch, n, m);
  cfg.hidden = hidden;
  if (arch == Arch::regretformer) cfg.heads = 2;
  MechanismNetwork net = MechanismNetwork::build(cfg, seed);
  net.params().set_requires_grad(false);
  return net;
}

Tensor profiles_of(const SettingSpec& spec, int64_t count, uint64_t seed) {
  SeededStream rng(seed);
  return sample_profiles(spec, count, rng);
}

}  // namespace

TEST_CASE("budget ratio worked examples") {
  EvaluationReport rep;
  rep.revenue = 1.0;
  rep.regret_sum = 0.001;
  CHECK(budget_ratio(rep, 0.001) == doctest::Approx(1.0));
  rep.regret_sum = 0.002;
  CHECK(budget_ratio(rep, 0.001) == doctest::Approx(2.0));
  rep.regret_sum = 0.0;
  CHECK(budget_ratio(rep, 0.001) == 0.0);
  rep.revenue = 0.0;
  CHECK(std::isnan(budget_ratio(rep, 0.001)));

  // scale consistency: doubling both sums leaves the ratio unchanged
  EvaluationReport a, b;
  a.revenue = 0.7;
  a.regret_sum = 0.0021;
  b.revenue = 1.4;
  b.regret_sum = 0.0042;
  CHECK(budget_ratio(a, 0.001) == doctest::Approx(budget_ratio(b, 0.001)));
}

TEST_CASE("evaluate_mechanism on a wrapped baseline reproduces its revenue") {
  BaselineMechanism vcg(BaselineMechanism::Kind::vcg);
  SettingSpec spec = SettingSpec::uniform01(2, 2);
  Tensor profiles = profiles_of(spec, 20000, 3);
  EvaluationReport rep = evaluate_mechanism(vcg, spec, profiles, 50, 0.001);
  CHECK(rep.revenue == doctest::Approx(2.0 / 3.0).epsilon(0.02));
  CHECK(rep.regret_mean >= 0.0);
  CHECK(rep.regret_mean <= 2e-3);  // zero-gradient mechanism: estimator stays put
}

TEST_CASE("evaluate_mechanism rejects shape mismatches for fixed nets") {
  MechanismNetwork net = small_net(1, Arch::regretnet, 2, 2, 16);
  SettingSpec other = SettingSpec::uniform01(2, 3);
  Tensor profiles = profiles_of(other, 8, 4);
  CHECK_THROWS_AS(evaluate_mechanism(net, other, profiles, 5, 0.001), ShapeError);
}

TEST_CASE("untrained network evaluates without error") {
  MechanismNetwork net = small_net(5, Arch::regretformer, 1, 2);
  SettingSpec spec = SettingSpec::uniform01(1, 2);
  Tensor profiles = profiles_of(spec, 64, 6);
  EvaluationReport rep = evaluate_mechanism(net, spec, profiles, 20, 0.001);
  CHECK(rep.regret_mean >= 0.0);
  CHECK(std::isfinite(rep.ratio));
}

TEST_CASE("more validation steps never reduce the regret estimate") {
  MechanismNetwork net = small_net(7, Arch::regretformer, 1, 2);
  SettingSpec spec = SettingSpec::uniform01(1, 2);
  Tensor profiles = profiles_of(spec, 32, 8);
  EvaluationReport fifty = evaluate_mechanism(net, spec, profiles, 50, 0.001);
  EvaluationReport thousand = evaluate_mechanism(net, spec, profiles, 400, 0.001);
  CHECK(thousand.regret_mean >= fifty.regret_mean);
}

TEST_CASE("cross(w, w) equals the standard estimate bit for bit") {
  MechanismNetwork net = small_net(9, Arch::equivariantnet, 2, 2);
  SettingSpec spec = SettingSpec::uniform01(2, 2);
  Tensor profiles = profiles_of(spec, 24, 10);

  EvaluationReport own = evaluate_mechanism(net, spec, profiles, 60, 0.001);
  CrossMisreportReport cross =
      cross_misreport_regret(net, net, spec, profiles, 60, 0.1);
  REQUIRE(cross.per_bidder.size() == own.per_bidder_regret.size());
  for (size_t i = 0; i < cross.per_bidder.size(); ++i) {
    CHECK(cross.per_bidder[i] == own.per_bidder_regret[i]);  // exact
  }
}

TEST_CASE("cross against a constant prober returns zero") {
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
  MechanismNetwork target = small_net(11, Arch::regretformer, 1, 2);
  ConstantMechanism prober;
  SettingSpec spec = SettingSpec::uniform01(1, 2);
  Tensor profiles = profiles_of(spec, 16, 12);
  CrossMisreportReport rep =
      cross_misreport_regret(target, prober, spec, profiles, 40, 0.1);
  // prober gradients vanish, so its misreports stay at the truth
  CHECK(rep.mean == 0.0);
}

TEST_CASE("distillation loss is zero exactly when outputs match") {
  MechanismNetwork a = small_net(13, Arch::regretformer, 1, 2);
  SettingSpec spec = SettingSpec::uniform01(1, 2);
  Tensor profiles = profiles_of(spec, 16, 14);
  ForwardOutput out = a.forward(profiles);
  CHECK(distillation_loss(out, out).item() == 0.0);

  MechanismNetwork b = small_net(14, Arch::regretformer, 1, 2);
  double kl = distillation_loss(out, b.forward(profiles)).item();
  CHECK(kl > 0.0);
}

TEST_CASE("self-distillation of an exact copy is a no-op") {
  MechanismNetwork teacher = small_net(15, Arch::regretformer, 1, 2);
  MechanismNetwork student = teacher.copy();
  SettingSpec spec = SettingSpec::uniform01(1, 2);
  Tensor profiles = profiles_of(spec, 32, 16);
  double kl = distillation_loss(teacher.forward(profiles),
                                student.forward(profiles))
                  .item();
  CHECK(kl <= 1e-10);
}

TEST_CASE("short desk distillation runs end to end") {
  MechanismNetwork teacher = small_net(17, Arch::regretformer, 1, 2);
  NetConfig scfg = default_net_config(Arch::regretnet, 1, 2);
  scfg.hidden = 16;
  MechanismNetwork student = MechanismNetwork::build(scfg, 18);

  DistillConfig cfg;
  cfg.iterations = 40;
  cfg.batch_size = 16;
  cfg.inner_steps = 2;
  cfg.eval_inner_steps = 30;
  cfg.eval_profiles = 64;

  DistillReport before_after =
      distill(teacher, student, SettingSpec::uniform01(1, 2), cfg);
  CHECK(std::isfinite(before_after.final_kl));
  CHECK(before_after.teacher_revenue > 0.0);
  for (int a = 0; a < 2; ++a) {
    CHECK(before_after.regret[a][a] >= 0.0);  // own-misreport cells
  }
}
