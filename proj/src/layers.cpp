#include "auctionlab/layers.hpp"

#include <cmath>

namespace auctionlab {

Tensor activate(const Tensor& x, Activation a) {
  switch (a) {
    case Activation::identity:
      return x;
    case Activation::tanh_act:
      return tanh(x);
  }
  return x;
}

int64_t ExchangeableParams::param_count() const {
  return w1.size() + w2.size() + w3.size() + w4.size() + w5.size();
}

namespace {

// Contracts a channel-first map [B, K, n, m] with weights [K, O] into
// [B, O, n, m].
Tensor channel_mix(const Tensor& x, const Tensor& w) {
  int64_t b = x.dim(0), k = x.dim(1), n = x.dim(2), m = x.dim(3);
  Tensor flat = reshape(permute(x, {0, 2, 3, 1}), {b * n * m, k});
  Tensor mixed = matmul(flat, w);  // [B*n*m, O]
  return permute(reshape(mixed, {b, n, m, w.dim(1)}), {0, 3, 1, 2});
}

}  // namespace

Tensor exchangeable_forward(const Tensor& x, const ExchangeableParams& p) {
  bool batched = x.rank() == 4;
  if (!batched && x.rank() != 3) {
    throw ShapeError("exchangeable_forward: expected rank 3 or 4, got " +
                     shape_str(x.shape()));
  }
  Tensor in = batched ? x : reshape(x, Shape{1, x.dim(0), x.dim(1), x.dim(2)});
  if (in.dim(1) != p.in_channels()) {
    throw ShapeError("exchangeable_forward: input has " +
                     std::to_string(in.dim(1)) + " channels, layer expects " +
                     std::to_string(p.in_channels()));
  }

  // Means over participants, items, and both; broadcast back over the grid.
  Tensor part_mean = reduce_mean(in, 2, true);
  Tensor item_mean = reduce_mean(in, 3, true);
  Tensor total_mean = reduce_mean(part_mean, 3, true);

  Tensor pre = add(add(channel_mix(in, p.w1), channel_mix(part_mean, p.w2)),
                   add(channel_mix(item_mean, p.w3),
                       channel_mix(total_mean, p.w4)));
  Tensor bias = reshape(p.w5, {p.out_channels(), 1, 1});
  Tensor out = activate(add(pre, bias), p.activation);
  return batched ? out : reshape(out, Shape{out.dim(1), out.dim(2), out.dim(3)});
}

int64_t AttentionParams::param_count() const {
  int64_t n = wo.size() + ln_gain.size() + ln_bias.size();
  for (const auto& t : wq) n += t.size();
  for (const auto& t : wk) n += t.size();
  for (const auto& t : wv) n += t.size();
  return n;
}

Tensor multi_head_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                            const AttentionParams& p) {
  int d = p.model_dim();
  if (q.dim(-1) != d || k.dim(-1) != d || v.dim(-1) != d) {
    throw ShapeError("multi_head_attention: trailing dims " +
                     shape_str(q.shape()) + "/" + shape_str(k.shape()) + "/" +
                     shape_str(v.shape()) + " must equal model dim " +
                     std::to_string(d));
  }
  if (static_cast<int>(p.wq.size()) != p.heads) {
    throw ShapeError("multi_head_attention: head count mismatch");
  }
  double scale = 1.0 / std::sqrt(static_cast<double>(p.head_dim()));

  Tensor qn = layer_norm(q, p.ln_gain, p.ln_bias);
  Tensor kn = layer_norm(k, p.ln_gain, p.ln_bias);
  Tensor vn = layer_norm(v, p.ln_gain, p.ln_bias);

  std::vector<Tensor> heads;
  heads.reserve(p.heads);
  for (int h = 0; h < p.heads; ++h) {
    Tensor qh = matmul(qn, p.wq[h]);  // [*, S, d_head]
    Tensor kh = matmul(kn, p.wk[h]);
    Tensor vh = matmul(vn, p.wv[h]);
    Tensor logits = mul(matmul(qh, transpose(kh)), scale);  // [*, S, S]
    Tensor weights = softmax_rows(logits);
    heads.push_back(matmul(weights, vh));
  }
  Tensor joined = concat(heads, -1);  // [*, S, H*d_head]
  return matmul(joined, p.wo);
}

Tensor dense_forward(const Tensor& x, const DenseParams& p) {
  if (x.dim(-1) != p.in_dim()) {
    throw ShapeError("dense_forward: input " + shape_str(x.shape()) +
                     " does not end in " + std::to_string(p.in_dim()));
  }
  return activate(add(matmul(x, p.weight), p.bias), p.activation);
}

Tensor positional_encoding(int64_t positions, int64_t dim) {
  if (dim % 2 != 0) {
    throw ShapeError("positional_encoding: dim must be even, got " +
                     std::to_string(dim));
  }
  std::vector<double> v(static_cast<size_t>(positions * dim));
  for (int64_t pos = 0; pos < positions; ++pos) {
    for (int64_t i = 0; i < dim / 2; ++i) {
      double freq = std::pow(10000.0, 2.0 * static_cast<double>(i) /
                                          static_cast<double>(dim));
      double angle = static_cast<double>(pos) / freq;
      v[pos * dim + 2 * i] = std::sin(angle);
      v[pos * dim + 2 * i + 1] = std::cos(angle);
    }
  }
  return Tensor::from({positions, dim}, std::move(v));
}

}  // namespace auctionlab
