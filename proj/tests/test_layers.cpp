#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "auctionlab/layers.hpp"
#include "auctionlab/sampling.hpp"

using namespace auctionlab;

namespace {

Tensor random_tensor(Shape shape, SeededStream& rng, double lo = -1.0,
                     double hi = 1.0) {
  std::vector<double> v(numel(shape));
  for (double& x : v) x = rng.uniform(lo, hi);
  return Tensor::from(std::move(shape), std::move(v));
}

ExchangeableParams random_exchangeable(int k, int o, SeededStream& rng,
                                       Activation act = Activation::tanh_act) {
  ExchangeableParams p;
  p.w1 = random_tensor({k, o}, rng);
  p.w2 = random_tensor({k, o}, rng);
  p.w3 = random_tensor({k, o}, rng);
  p.w4 = random_tensor({k, o}, rng);
  p.w5 = random_tensor({o}, rng);
  p.activation = act;
  return p;
}

AttentionParams random_attention(int d, int heads, SeededStream& rng) {
  AttentionParams p;
  p.heads = heads;
  int dh = d / heads;
  for (int h = 0; h < heads; ++h) {
    p.wq.push_back(random_tensor({d, dh}, rng));
    p.wk.push_back(random_tensor({d, dh}, rng));
    p.wv.push_back(random_tensor({d, dh}, rng));
  }
  p.wo = random_tensor({d, d}, rng);
  p.ln_gain = Tensor::full({d}, 1.0);
  p.ln_bias = Tensor::zeros({d});
  return p;
}

// Applies a permutation to one axis of a tensor, by value.
Tensor permute_axis(const Tensor& t, int axis, const std::vector<int64_t>& order) {
  Shape shape = t.shape();
  std::vector<double> out(t.size());
  auto strides = strides_of(shape);
  int64_t n = t.size();
  for (int64_t i = 0; i < n; ++i) {
    // decompose, remap axis coordinate, recompose
    int64_t rem = i, src = 0;
    for (size_t k = 0; k < shape.size(); ++k) {
      int64_t coord = rem / strides[k];
      rem %= strides[k];
      int64_t mapped = (static_cast<int>(k) == axis)
                           ? order[static_cast<size_t>(coord)]
                           : coord;
      src += mapped * strides[k];
    }
    out[static_cast<size_t>(i)] = t.values()[static_cast<size_t>(src)];
  }
  return Tensor::from(shape, std::move(out));
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  double worst = 0.0;
  for (size_t i = 0; i < a.values().size(); ++i) {
    worst = std::max(worst, std::abs(a.values()[i] - b.values()[i]));
  }
  return worst;
}

}  // namespace

TEST_CASE("exchangeable: zero weights collapse to the bias") {
  ExchangeableParams p;
  p.w1 = Tensor::zeros({1, 2});
  p.w2 = Tensor::zeros({1, 2});
  p.w3 = Tensor::zeros({1, 2});
  p.w4 = Tensor::zeros({1, 2});
  p.w5 = Tensor::from({2}, {0.3, -0.4});
  p.activation = Activation::tanh_act;
  SeededStream rng(5);
  Tensor x = random_tensor({1, 3, 4}, rng);
  Tensor y = exchangeable_forward(x, p);
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 4; ++j) {
      CHECK(y.at({0, i, j}) == doctest::Approx(std::tanh(0.3)));
      CHECK(y.at({1, i, j}) == doctest::Approx(std::tanh(-0.4)));
    }
  }
}

TEST_CASE("exchangeable: identity configuration passes input through") {
  ExchangeableParams p;
  p.w1 = Tensor::from({1, 1}, {1.0});
  p.w2 = Tensor::zeros({1, 1});
  p.w3 = Tensor::zeros({1, 1});
  p.w4 = Tensor::zeros({1, 1});
  p.w5 = Tensor::zeros({1});
  p.activation = Activation::identity;
  SeededStream rng(6);
  Tensor x = random_tensor({1, 2, 3}, rng);
  Tensor y = exchangeable_forward(x, p);
  CHECK(max_abs_diff(x, y) == 0.0);
}

TEST_CASE("exchangeable: permutation equivariance in rows and columns") {
  SeededStream rng(7);
  ExchangeableParams p = random_exchangeable(2, 3, rng);
  Tensor x = random_tensor({2, 4, 5}, rng);

  std::vector<int64_t> row_perm{2, 0, 3, 1};
  std::vector<int64_t> col_perm{4, 2, 0, 1, 3};

  Tensor y = exchangeable_forward(x, p);
  Tensor y_perm = permute_axis(permute_axis(y, 1, row_perm), 2, col_perm);
  Tensor x_perm = permute_axis(permute_axis(x, 1, row_perm), 2, col_perm);
  Tensor y_of_perm = exchangeable_forward(x_perm, p);
  CHECK(max_abs_diff(y_perm, y_of_perm) <= 1e-10);
}

TEST_CASE("exchangeable: shape mismatch raises") {
  SeededStream rng(8);
  ExchangeableParams p = random_exchangeable(2, 3, rng);
  Tensor x = random_tensor({3, 4, 5}, rng);  // 3 channels, layer expects 2
  CHECK_THROWS_AS(exchangeable_forward(x, p), ShapeError);
}

TEST_CASE("attention: single position reduces to the value path") {
  SeededStream rng(9);
  int d = 8, heads = 2;
  AttentionParams p = random_attention(d, heads, rng);
  Tensor x = random_tensor({1, d}, rng);

  Tensor out = multi_head_attention(x, x, x, p);

  Tensor xn = layer_norm(x, p.ln_gain, p.ln_bias);
  std::vector<Tensor> head_outs;
  for (int h = 0; h < heads; ++h) head_outs.push_back(matmul(xn, p.wv[h]));
  Tensor expect = matmul(concat(head_outs, -1), p.wo);
  CHECK(max_abs_diff(out, expect) <= 1e-12);
}

TEST_CASE("attention: permutation equivariance over positions") {
  SeededStream rng(10);
  int d = 8;
  AttentionParams p = random_attention(d, 2, rng);
  Tensor x = random_tensor({5, d}, rng);
  std::vector<int64_t> perm{3, 1, 4, 0, 2};

  Tensor out = multi_head_attention(x, x, x, p);
  Tensor xp = permute_axis(x, 0, perm);
  Tensor out_p = multi_head_attention(xp, xp, xp, p);
  CHECK(max_abs_diff(permute_axis(out, 0, perm), out_p) <= 1e-10);
}

TEST_CASE("attention: zero value projections give zero output") {
  SeededStream rng(11);
  int d = 4;
  AttentionParams p = random_attention(d, 2, rng);
  for (auto& wv : p.wv) wv = Tensor::zeros(wv.shape());
  Tensor x = random_tensor({3, d}, rng);
  Tensor out = multi_head_attention(x, x, x, p);
  for (double v : out.values()) CHECK(v == 0.0);
}

TEST_CASE("attention: head count must divide model dim") {
  SeededStream rng(12);
  AttentionParams p = random_attention(8, 2, rng);
  p.heads = 3;  // now inconsistent with the stored projections
  Tensor x = random_tensor({2, 8}, rng);
  CHECK_THROWS_AS(multi_head_attention(x, x, x, p), ShapeError);
}

TEST_CASE("positional encoding basics") {
  Tensor pe = positional_encoding(6, 8);
  // position zero alternates sin(0), cos(0)
  for (int i = 0; i < 8; i += 2) {
    CHECK(pe.at({0, i}) == 0.0);
    CHECK(pe.at({0, i + 1}) == 1.0);
  }
  for (double v : pe.values()) {
    CHECK(v >= -1.0);
    CHECK(v <= 1.0);
  }
  // distinct rows for distinct positions
  for (int a = 0; a < 6; ++a) {
    for (int b = a + 1; b < 6; ++b) {
      double diff = 0.0;
      for (int c = 0; c < 8; ++c) diff += std::abs(pe.at({a, c}) - pe.at({b, c}));
      CHECK(diff > 1e-6);
    }
  }
  CHECK_THROWS_AS(positional_encoding(4, 5), ShapeError);
}

TEST_CASE("positional encoding breaks attention equivariance") {
  SeededStream rng(13);
  int d = 8;
  AttentionParams p = random_attention(d, 2, rng);
  Tensor x = random_tensor({4, d}, rng);
  Tensor pe = positional_encoding(4, d);

  std::vector<int64_t> perm{2, 0, 3, 1};
  Tensor with_pe = add(x, pe);
  Tensor out = multi_head_attention(with_pe, with_pe, with_pe, p);

  Tensor xp = permute_axis(x, 0, perm);
  Tensor with_pe_p = add(xp, pe);
  Tensor out_p = multi_head_attention(with_pe_p, with_pe_p, with_pe_p, p);

  CHECK(max_abs_diff(permute_axis(out, 0, perm), out_p) > 1e-6);
}

TEST_CASE("dense: constant and identity configurations") {
  DenseParams p;
  p.weight = Tensor::zeros({3, 2});
  p.bias = Tensor::from({2}, {0.7, -0.2});
  p.activation = Activation::identity;
  SeededStream rng(14);
  Tensor x = random_tensor({4, 3}, rng);
  Tensor y = dense_forward(x, p);
  for (int r = 0; r < 4; ++r) {
    CHECK(y.at({r, 0}) == 0.7);
    CHECK(y.at({r, 1}) == -0.2);
  }

  DenseParams id;
  id.weight = Tensor::from({2, 2}, {1, 0, 0, 1});
  id.bias = Tensor::zeros({2});
  id.activation = Activation::identity;
  Tensor x2 = random_tensor({3, 2}, rng);
  CHECK(max_abs_diff(dense_forward(x2, id), x2) == 0.0);

  CHECK_THROWS_AS(dense_forward(x2, p), ShapeError);
}

TEST_CASE("layer gradients pass the finite-difference oracle") {
  SeededStream rng(15);

  SUBCASE("exchangeable") {
    ExchangeableParams p = random_exchangeable(2, 2, rng);
    Tensor x = random_tensor({2, 2, 3}, rng);
    double err = finite_difference_check(
        [&](const Tensor& t) { return sum_all(exchangeable_forward(t, p)); }, x);
    CHECK(err <= 1e-4);
  }
  SUBCASE("attention") {
    AttentionParams p = random_attention(4, 2, rng);
    Tensor x = random_tensor({3, 4}, rng);
    double err = finite_difference_check(
        [&](const Tensor& t) {
          return sum_all(multi_head_attention(t, t, t, p));
        },
        x);
    CHECK(err <= 1e-4);
  }
  SUBCASE("dense") {
    DenseParams p;
    p.weight = random_tensor({3, 2}, rng);
    p.bias = random_tensor({2}, rng);
    p.activation = Activation::tanh_act;
    Tensor x = random_tensor({4, 3}, rng);
    double err = finite_difference_check(
        [&](const Tensor& t) { return sum_all(dense_forward(t, p)); }, x);
    CHECK(err <= 1e-4);
  }
  SUBCASE("dense weight gradient") {
    Tensor x = random_tensor({4, 3}, rng);
    Tensor bias = random_tensor({2}, rng);
    Tensor w0 = random_tensor({3, 2}, rng);
    double err = finite_difference_check(
        [&](const Tensor& w) {
          DenseParams p{w, bias, Activation::tanh_act};
          return sum_all(dense_forward(x, p));
        },
        w0);
    CHECK(err <= 1e-4);
  }
}
