#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "auctionlab/losses.hpp"
#include "auctionlab/training.hpp"

using namespace auctionlab;

TEST_CASE("outer lagrangian loss worked examples") {
  LagrangianState state;

  SUBCASE("zero regret leaves pure negated revenue") {
    state.lambdas = {1.0, 1.0};
    state.rho = 3.0;
    Tensor p = Tensor::from({2}, {0.4, 0.3});
    Tensor r = Tensor::zeros({2});
    CHECK(outer_loss_lagrangian(p, r, state).item() == doctest::Approx(-0.7));
  }
  SUBCASE("linear penalty") {
    state.lambdas = {1.0, 1.0};
    state.rho = 0.0;
    Tensor p = Tensor::zeros({2});
    Tensor r = Tensor::from({2}, {0.1, 0.1});
    CHECK(outer_loss_lagrangian(p, r, state).item() == doctest::Approx(0.2));
  }
  SUBCASE("quadratic penalty") {
    state.lambdas = {0.0};
    state.rho = 2.0;
    Tensor p = Tensor::zeros({1});
    Tensor r = Tensor::from({1}, {0.1});
    CHECK(outer_loss_lagrangian(p, r, state).item() == doctest::Approx(0.01));
  }
}

TEST_CASE("outer budget loss worked examples") {
  Tensor p = Tensor::from({2}, {0.6, 0.4});
  Tensor r = Tensor::from({2}, {0.006, 0.004});
  CHECK(outer_loss_budget(p, r, 0.0).item() == doctest::Approx(-1.0));
  CHECK(outer_loss_budget(p, r, 1.0).item() == doctest::Approx(-0.99));
}

TEST_CASE("budget loss gradient is linear in the two terms") {
  // d(loss)/dx == -d(sum P)/dx + gamma d(sum R)/dx for shared inputs
  Tensor x0 = Tensor::from({2}, {0.3, 0.7});
  double gamma = 1.7;

  auto payments = [](const Tensor& x) { return sigmoid(x); };
  auto regrets = [](const Tensor& x) { return mul(tanh(x), 0.01); };

  Tensor xa = x0.detached().set_requires_grad(true);
  {
    Tape tape;
    TapeScope scope(tape);
    tape.backward(outer_loss_budget(payments(xa), regrets(xa), gamma));
  }
  Tensor xp = x0.detached().set_requires_grad(true);
  {
    Tape tape;
    TapeScope scope(tape);
    tape.backward(neg(sum_all(payments(xp))));
  }
  Tensor xr = x0.detached().set_requires_grad(true);
  {
    Tape tape;
    TapeScope scope(tape);
    tape.backward(sum_all(regrets(xr)));
  }
  for (int i = 0; i < 2; ++i) {
    CHECK(xa.grad()[i] ==
          doctest::Approx(xp.grad()[i] + gamma * xr.grad()[i]).epsilon(1e-12));
  }
}

TEST_CASE("with lambda=gamma and rho=0 the two objectives coincide") {
  double gamma = 1.3;
  LagrangianState state;
  state.lambdas = {gamma, gamma, gamma};
  state.rho = 0.0;
  Tensor p = Tensor::from({3}, {0.2, 0.5, 0.1});
  Tensor r = Tensor::from({3}, {0.01, 0.02, 0.005});
  CHECK(outer_loss_lagrangian(p, r, state).item() ==
        outer_loss_budget(p, r, gamma).item());
}

TEST_CASE("lagrangian multiplier schedule") {
  LagrangianState state;
  state.lambdas = {1.0};
  state.rho = 2.0;
  state.rho_lr = 0.25;

  LagrangianState next = lagrangian_multiplier_update(state, {0.5});
  CHECK(next.lambdas[0] == doctest::Approx(2.0));
  CHECK(next.rho == doctest::Approx(2.25));

  LagrangianState frozen = lagrangian_multiplier_update(state, {0.0});
  CHECK(frozen.lambdas[0] == doctest::Approx(1.0));
}

TEST_CASE("dual update fixed point and worked value") {
  DualState state;
  state.gamma = 1.0;
  state.gamma_lr = 0.5;
  state.r_max = 0.001;

  SUBCASE("ratio at the budget leaves gamma unchanged") {
    DualState next = dual_update(state, 0.001, 1.0);
    CHECK(next.gamma == doctest::Approx(1.0).epsilon(1e-15));
  }
  SUBCASE("worked example: gamma -> 1 + 0.5 ln 10") {
    DualState next = dual_update(state, 0.01, 1.0);
    CHECK(std::abs(next.gamma - (1.0 + 0.5 * std::log(10.0))) <= 1e-12);
  }
  SUBCASE("clipping at zero") {
    DualState low = state;
    low.gamma = 0.1;
    DualState next = dual_update(low, 1e-12, 1.0);  // log term far negative
    CHECK(next.gamma == 0.0);
  }
  SUBCASE("zero regret uses the floor, not -inf") {
    DualState next = dual_update(state, 0.0, 1.0);
    CHECK(std::isfinite(next.gamma));
    CHECK(next.gamma == 0.0);
  }
  SUBCASE("non-positive revenue skips the update") {
    DualState next = dual_update(state, 0.01, 0.0);
    CHECK(next.gamma == state.gamma);
  }
}

TEST_CASE("gamma stays nonnegative under random update sequences") {
  SeededStream rng(123);
  DualState state;
  state.gamma = 1.0;
  state.gamma_lr = 0.5;
  state.r_max = 0.001;
  for (int step = 0; step < 1000; ++step) {
    double sum_r = rng.next_unit() * 0.01;
    double sum_p = rng.next_unit();
    state = dual_update(state, sum_r, sum_p);
    CHECK(state.gamma >= 0.0);
  }
}

TEST_CASE("budget schedule decay and floor") {
  DualState state;
  state.r_max = 0.01;
  state.r_max_end = 0.001;
  state.r_max_mult = 0.9;
  DualState next = budget_schedule_step(state);
  CHECK(next.r_max == doctest::Approx(0.009));

  state.r_max = 0.001;
  CHECK(budget_schedule_step(state).r_max == doctest::Approx(0.001));
}

TEST_CASE("schedule multiplier reaches the end budget at two-thirds time") {
  int64_t schedule_steps = 12;
  double mult = budget_schedule_multiplier(0.01, 0.001, schedule_steps);
  // after 2/3 of the steps the budget must have reached the end value
  DualState state;
  state.r_max = 0.01;
  state.r_max_end = 0.001;
  state.r_max_mult = mult;
  int64_t decay_steps = (2 * schedule_steps) / 3;
  for (int64_t s = 0; s < decay_steps; ++s) state = budget_schedule_step(state);
  CHECK(state.r_max == doctest::Approx(0.001).epsilon(1e-9));
  // and the trajectory is nonincreasing, bounded below
  DualState again;
  again.r_max = 0.01;
  again.r_max_end = 0.001;
  again.r_max_mult = mult;
  double prev = again.r_max;
  for (int64_t s = 0; s < schedule_steps; ++s) {
    again = budget_schedule_step(again);
    CHECK(again.r_max <= prev + 1e-15);
    CHECK(again.r_max >= again.r_max_end);
    prev = again.r_max;
  }
}

TEST_CASE("metrics record aggregates") {
  MetricsRecord rec = MetricsRecord::from({0.6, 0.4}, {0.0006, 0.0004}, 0.001);
  CHECK(rec.revenue == doctest::Approx(1.0));
  CHECK(rec.regret_mean == doctest::Approx(0.0005));
  CHECK(rec.ratio == doctest::Approx(1.0));

  MetricsRecord zero = MetricsRecord::from({0.0}, {0.0}, 0.001);
  CHECK(std::isnan(zero.ratio));
}

TEST_CASE("inner loss matches negated utility and differentiates") {
  MechanismNetwork net =
      MechanismNetwork::build(default_net_config(Arch::regretformer, 1, 2), 3);
  net.params().set_requires_grad(false);
  SeededStream rng(4);
  Tensor truth = sample_profiles(SettingSpec::uniform01(1, 2), 4, rng);

  // misreport == truth gives exactly -sum u(truth)
  Tensor loss = inner_loss(0, truth, truth, net);
  ForwardOutput out = net.forward(truth);
  Tensor u = utilities(out, truth);
  double expect = 0.0;
  for (double x : u.values()) expect -= x;
  CHECK(loss.item() == doctest::Approx(expect).epsilon(1e-12));

  // gradient w.r.t. the misreported row passes finite differences
  Tensor mis0 = truth.detached();
  double err = finite_difference_check(
      [&](const Tensor& mis) { return inner_loss(0, truth, mis, net); }, mis0);
  CHECK(err <= 1e-4);
}
