#pragma once

// Neural building blocks: exchangeable layer, multi-head self-attention,
// dense layer, sinusoidal positional encoding.

#include "auctionlab/tensor.hpp"

namespace auctionlab {

enum class Activation { identity, tanh_act };

Tensor activate(const Tensor& x, Activation a);

// Permutation-equivariant layer over a channel-first (K, n, m) tensor.
// Each output channel mixes the element itself, its participant-axis mean,
// its item-axis mean, and the global mean, with weights shared across cells.
struct ExchangeableParams {
  Tensor w1, w2, w3, w4;  // each K x O
  Tensor w5;              // O
  Activation activation = Activation::tanh_act;

  int in_channels() const { return static_cast<int>(w1.dim(0)); }
  int out_channels() const { return static_cast<int>(w1.dim(1)); }
  int64_t param_count() const;
};

// x: [K, n, m] or [B, K, n, m] -> [O, n, m] / [B, O, n, m]
Tensor exchangeable_forward(const Tensor& x, const ExchangeableParams& p);

// Pre-norm multi-head self-attention; projections have no biases, layer
// normalization (affine) is applied to each input before projecting.
struct AttentionParams {
  std::vector<Tensor> wq, wk, wv;  // per head: d x d_head
  Tensor wo;                       // H*d_head x d
  Tensor ln_gain, ln_bias;         // d
  int heads = 1;

  int model_dim() const { return static_cast<int>(wq.at(0).dim(0)); }
  int head_dim() const { return static_cast<int>(wq.at(0).dim(1)); }
  int64_t param_count() const;
};

// q,k,v: [S, d] or [batch, S, d]; output matches q's shape.
Tensor multi_head_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                            const AttentionParams& p);

struct DenseParams {
  Tensor weight;  // in x out
  Tensor bias;    // out
  Activation activation = Activation::identity;

  int in_dim() const { return static_cast<int>(weight.dim(0)); }
  int out_dim() const { return static_cast<int>(weight.dim(1)); }
  int64_t param_count() const { return weight.size() + bias.size(); }
};

// x: [..., in] -> [..., out], the same affine map at every leading index.
Tensor dense_forward(const Tensor& x, const DenseParams& p);

// Fixed sinusoidal table: (pos, 2i) = sin(pos / 10000^(2i/d)),
// (pos, 2i+1) = cos(pos / 10000^(2i/d)). No learnable parameters.
Tensor positional_encoding(int64_t positions, int64_t dim);

}  // namespace auctionlab
