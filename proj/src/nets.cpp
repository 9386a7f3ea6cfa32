#include "auctionlab/nets.hpp"

#include <cmath>
#include <cstring>
#include <stdexcept>

namespace auctionlab {

std::string arch_name(Arch a) {
  switch (a) {
    case Arch::regretnet:
      return "regretnet";
    case Arch::equivariantnet:
      return "equivariantnet";
    case Arch::regretformer:
      return "regretformer";
  }
  return "?";
}

Arch arch_from_name(const std::string& name) {
  if (name == "regretnet") return Arch::regretnet;
  if (name == "equivariantnet") return Arch::equivariantnet;
  if (name == "regretformer") return Arch::regretformer;
  throw std::invalid_argument("unknown architecture: " + name);
}

NetConfig default_net_config(Arch arch, int n, int m) {
  NetConfig cfg;
  cfg.arch = arch;
  int cells = n * m;
  switch (arch) {
    case Arch::regretnet:
      // Layer count per the small/large split; width 100 reproduces the
      // published parameter counts exactly.
      cfg.layers = cells <= 6 ? 3 : 6;
      cfg.hidden = 100;
      cfg.fixed_n = n;
      cfg.fixed_m = m;
      break;
    case Arch::equivariantnet:
      cfg.layers = cells <= 4 ? 3 : (cells <= 6 ? 5 : 6);
      cfg.hidden = 32;
      break;
    case Arch::regretformer:
      cfg.layers = 1;  // exchangeable embed depth
      if (cells <= 2) {
        cfg.hidden = 32;
        cfg.att_blocks = 1;
        cfg.heads = 2;
      } else if (cells <= 6) {
        cfg.hidden = 64;
        cfg.att_blocks = 1;
        cfg.heads = 2;
      } else {
        cfg.hidden = 128;
        cfg.att_blocks = 2;
        cfg.heads = 4;
      }
      break;
  }
  return cfg;
}

// ---------------------------------------------------------------------------
// ParamSet

Tensor ParamSet::add(const std::string& name, Tensor t) {
  for (const auto& it : items_) {
    if (it.name == name) {
      throw std::invalid_argument("duplicate parameter name: " + name);
    }
  }
  items_.push_back({name, t});
  return t;
}

Tensor& ParamSet::at(const std::string& name) {
  for (auto& it : items_) {
    if (it.name == name) return it.tensor;
  }
  throw std::out_of_range("parameter not found: " + name);
}

const Tensor& ParamSet::at(const std::string& name) const {
  for (const auto& it : items_) {
    if (it.name == name) return it.tensor;
  }
  throw std::out_of_range("parameter not found: " + name);
}

int64_t ParamSet::value_count() const {
  int64_t n = 0;
  for (const auto& it : items_) n += it.tensor.size();
  return n;
}

void ParamSet::set_requires_grad(bool on) {
  for (auto& it : items_) it.tensor.set_requires_grad(on);
}

void ParamSet::zero_grads() {
  for (auto& it : items_) it.tensor.zero_grad();
}

uint64_t ParamSet::value_hash() const {
  uint64_t h = 1469598103934665603ull;
  auto feed = [&h](const void* data, size_t len) {
    const unsigned char* p = static_cast<const unsigned char*>(data);
    for (size_t i = 0; i < len; ++i) {
      h ^= p[i];
      h *= 1099511628211ull;
    }
  };
  for (const auto& it : items_) {
    feed(it.name.data(), it.name.size());
    feed(it.tensor.values().data(), it.tensor.values().size() * sizeof(double));
  }
  return h;
}

bool ParamSet::all_finite() const {
  for (const auto& it : items_) {
    for (double v : it.tensor.values()) {
      if (!std::isfinite(v)) return false;
    }
  }
  return true;
}

// ---------------------------------------------------------------------------
// Initialization

namespace {

// Glorot-uniform init, damped where requested. The attention variant needs
// damping: its allocation logits are a dot product of two means of the same
// feature stream, so they start near +||features||^2 and full-scale features
// saturate the column softmax before training begins.
constexpr double kAttentionInitScale = 0.35;

thread_local double g_init_scale = 1.0;

Tensor xavier(Shape shape, int64_t fan_in, int64_t fan_out, SeededStream& rng) {
  double a = g_init_scale * std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::vector<double> v(numel(shape));
  for (double& x : v) x = rng.uniform(-a, a);
  return Tensor::from(std::move(shape), std::move(v));
}

ExchangeableParams make_exchangeable(ParamSet& ps, const std::string& prefix,
                                     int in_ch, int out_ch, Activation act,
                                     SeededStream& rng) {
  ExchangeableParams p;
  p.w1 = ps.add(prefix + ".w1", xavier({in_ch, out_ch}, in_ch, out_ch, rng));
  p.w2 = ps.add(prefix + ".w2", xavier({in_ch, out_ch}, in_ch, out_ch, rng));
  p.w3 = ps.add(prefix + ".w3", xavier({in_ch, out_ch}, in_ch, out_ch, rng));
  p.w4 = ps.add(prefix + ".w4", xavier({in_ch, out_ch}, in_ch, out_ch, rng));
  p.w5 = ps.add(prefix + ".w5", Tensor::zeros({out_ch}));
  p.activation = act;
  return p;
}

DenseParams make_dense(ParamSet& ps, const std::string& prefix, int in_dim,
                       int out_dim, Activation act, SeededStream& rng) {
  DenseParams p;
  p.weight = ps.add(prefix + ".weight", xavier({in_dim, out_dim}, in_dim, out_dim, rng));
  p.bias = ps.add(prefix + ".bias", Tensor::zeros({out_dim}));
  p.activation = act;
  return p;
}

AttentionParams make_attention(ParamSet& ps, const std::string& prefix, int d,
                               int heads, SeededStream& rng) {
  if (d % heads != 0) {
    throw ShapeError("attention: head count " + std::to_string(heads) +
                     " does not divide model dim " + std::to_string(d));
  }
  int dh = d / heads;
  AttentionParams p;
  p.heads = heads;
  for (int h = 0; h < heads; ++h) {
    std::string tag = prefix + ".h" + std::to_string(h);
    p.wq.push_back(ps.add(tag + ".wq", xavier({d, dh}, d, dh, rng)));
    p.wk.push_back(ps.add(tag + ".wk", xavier({d, dh}, d, dh, rng)));
    p.wv.push_back(ps.add(tag + ".wv", xavier({d, dh}, d, dh, rng)));
  }
  p.wo = ps.add(prefix + ".wo", xavier({d, d}, d, d, rng));
  p.ln_gain = ps.add(prefix + ".ln_gain", Tensor::full({d}, 1.0));
  p.ln_bias = ps.add(prefix + ".ln_bias", Tensor::zeros({d}));
  return p;
}

}  // namespace

// ---------------------------------------------------------------------------
// Network wiring

struct MechanismNetwork::Blocks {
  // regretnet
  std::vector<DenseParams> alloc_stack;
  std::vector<DenseParams> pay_stack;
  // equivariantnet
  std::vector<ExchangeableParams> trunk;
  ExchangeableParams alloc_head;
  ExchangeableParams pay_head;
  // regretformer
  ExchangeableParams embed;
  struct AttBlock {
    AttentionParams item;
    AttentionParams part;
    DenseParams combine;
  };
  std::vector<AttBlock> att;
};

MechanismNetwork MechanismNetwork::build(const NetConfig& cfg, uint64_t seed) {
  MechanismNetwork net;
  net.cfg_ = cfg;
  SeededStream rng(seed, 0x6e657473ull);  // dedicated init substream
  ParamSet& ps = net.params_;
  auto blocks = std::make_shared<Blocks>();

  switch (cfg.arch) {
    case Arch::regretnet: {
      if (cfg.fixed_n < 1 || cfg.fixed_m < 1) {
        throw std::invalid_argument("regretnet requires a fixed (n, m)");
      }
      int in = cfg.fixed_n * cfg.fixed_m;
      int alloc_out = (cfg.fixed_n + 1) * cfg.fixed_m;
      auto stack = [&](const std::string& tag, int out_dim,
                       std::vector<DenseParams>& dst) {
        int cur = in;
        for (int l = 0; l + 1 < cfg.layers; ++l) {
          dst.push_back(make_dense(ps, tag + ".fc" + std::to_string(l), cur,
                                   cfg.hidden, Activation::tanh_act, rng));
          cur = cfg.hidden;
        }
        dst.push_back(make_dense(ps, tag + ".out", cur, out_dim,
                                 Activation::identity, rng));
      };
      stack("alloc", alloc_out, blocks->alloc_stack);
      stack("pay", cfg.fixed_n, blocks->pay_stack);
      break;
    }
    case Arch::equivariantnet: {
      int h = cfg.hidden;
      int trunk_depth = cfg.layers - 1;
      if (trunk_depth < 1) {
        throw std::invalid_argument("equivariantnet needs >= 2 layers");
      }
      int in_ch = 1;
      for (int l = 0; l < trunk_depth; ++l) {
        blocks->trunk.push_back(make_exchangeable(
            ps, "trunk.x" + std::to_string(l), in_ch, h,
            Activation::tanh_act, rng));
        in_ch = h;
      }
      blocks->alloc_head = make_exchangeable(ps, "alloc.head", h, 1,
                                             Activation::identity, rng);
      blocks->pay_head = make_exchangeable(ps, "pay.head", h, 1,
                                           Activation::identity, rng);
      break;
    }
    case Arch::regretformer: {
      int d = cfg.hidden;
      g_init_scale = kAttentionInitScale;
      blocks->embed =
          make_exchangeable(ps, "embed", 1, d, Activation::tanh_act, rng);
      for (int b = 0; b < cfg.att_blocks; ++b) {
        std::string tag = "block" + std::to_string(b);
        Blocks::AttBlock ab;
        ab.item = make_attention(ps, tag + ".item", d, cfg.heads, rng);
        ab.part = make_attention(ps, tag + ".part", d, cfg.heads, rng);
        ab.combine = make_dense(ps, tag + ".combine", 2 * d, d,
                                Activation::tanh_act, rng);
        blocks->att.push_back(std::move(ab));
      }
      g_init_scale = 1.0;
      break;
    }
  }
  net.blocks_ = std::move(blocks);
  return net;
}

void MechanismNetwork::wire() {
  // Rebind block views to the current params_ tensors by name.
  auto rebuilt = std::make_shared<Blocks>(*blocks_);
  auto rebind = [this](Tensor& t, const std::string&) { (void)t; };
  (void)rebind;
  // Blocks hold Tensor handles; rebuild them from params_ by reconstructing
  // through the same naming scheme.
  auto& ps = params_;
  auto fetch_ex = [&ps](ExchangeableParams& p, const std::string& prefix) {
    p.w1 = ps.at(prefix + ".w1");
    p.w2 = ps.at(prefix + ".w2");
    p.w3 = ps.at(prefix + ".w3");
    p.w4 = ps.at(prefix + ".w4");
    p.w5 = ps.at(prefix + ".w5");
  };
  auto fetch_dense = [&ps](DenseParams& p, const std::string& prefix) {
    p.weight = ps.at(prefix + ".weight");
    p.bias = ps.at(prefix + ".bias");
  };
  auto fetch_att = [&ps](AttentionParams& p, const std::string& prefix) {
    for (int h = 0; h < p.heads; ++h) {
      std::string tag = prefix + ".h" + std::to_string(h);
      p.wq[static_cast<size_t>(h)] = ps.at(tag + ".wq");
      p.wk[static_cast<size_t>(h)] = ps.at(tag + ".wk");
      p.wv[static_cast<size_t>(h)] = ps.at(tag + ".wv");
    }
    p.wo = ps.at(prefix + ".wo");
    p.ln_gain = ps.at(prefix + ".ln_gain");
    p.ln_bias = ps.at(prefix + ".ln_bias");
  };

  switch (cfg_.arch) {
    case Arch::regretnet:
      for (size_t l = 0; l + 1 < rebuilt->alloc_stack.size(); ++l) {
        fetch_dense(rebuilt->alloc_stack[l], "alloc.fc" + std::to_string(l));
        fetch_dense(rebuilt->pay_stack[l], "pay.fc" + std::to_string(l));
      }
      fetch_dense(rebuilt->alloc_stack.back(), "alloc.out");
      fetch_dense(rebuilt->pay_stack.back(), "pay.out");
      break;
    case Arch::equivariantnet:
      for (size_t l = 0; l < rebuilt->trunk.size(); ++l) {
        fetch_ex(rebuilt->trunk[l], "trunk.x" + std::to_string(l));
      }
      fetch_ex(rebuilt->alloc_head, "alloc.head");
      fetch_ex(rebuilt->pay_head, "pay.head");
      break;
    case Arch::regretformer:
      fetch_ex(rebuilt->embed, "embed");
      for (size_t b = 0; b < rebuilt->att.size(); ++b) {
        std::string tag = "block" + std::to_string(b);
        fetch_att(rebuilt->att[b].item, tag + ".item");
        fetch_att(rebuilt->att[b].part, tag + ".part");
        fetch_dense(rebuilt->att[b].combine, tag + ".combine");
      }
      break;
  }
  blocks_ = std::move(rebuilt);
}

void MechanismNetwork::load_params(const std::vector<NamedParam>& params) {
  if (params.size() != params_.items().size()) {
    throw std::invalid_argument("load_params: parameter count mismatch");
  }
  for (size_t i = 0; i < params.size(); ++i) {
    auto& dst = params_.items()[i];
    const auto& src = params[i];
    if (src.name != dst.name || src.tensor.shape() != dst.tensor.shape()) {
      throw std::invalid_argument("load_params: mismatch at " + dst.name);
    }
    dst.tensor = src.tensor.detached();
  }
  wire();
}

MechanismNetwork MechanismNetwork::copy() const {
  MechanismNetwork dup;
  dup.cfg_ = cfg_;
  dup.blocks_ = blocks_;
  for (const auto& it : params_.items()) {
    dup.params_.add(it.name, it.tensor.detached());
  }
  dup.wire();
  return dup;
}

bool MechanismNetwork::accepts(int n, int m) const {
  if (cfg_.arch == Arch::regretnet) {
    return n == cfg_.fixed_n && m == cfg_.fixed_m;
  }
  return n >= 1 && m >= 1;
}

// ---------------------------------------------------------------------------
// Forward passes

Tensor compute_payments(const Tensor& allocation, const Tensor& fractions,
                        const Tensor& bids) {
  int64_t n = bids.dim(1);
  Tensor z = allocation;
  if (allocation.dim(1) == n + 1) {
    z = slice(allocation, 1, 0, n);
  } else if (allocation.dim(1) != n) {
    throw ShapeError("compute_payments: allocation rows " +
                     std::to_string(allocation.dim(1)) + " vs bidders " +
                     std::to_string(n));
  }
  Tensor expected = reduce_sum(mul(z, bids), 2);  // [B, n]
  return mul(fractions, expected);
}

namespace {

// Softmax over the participant axis of [B, n+1, m].
Tensor column_softmax(const Tensor& logits) {
  Tensor t = permute(logits, {0, 2, 1});
  Tensor sm = softmax_rows(t);
  return permute(sm, {0, 2, 1});
}

}  // namespace

ForwardOutput MechanismNetwork::forward(const Tensor& bids) const {
  if (bids.rank() != 3) {
    throw ShapeError("forward: bids must be [batch, n, m], got " +
                     shape_str(bids.shape()));
  }
  if (!accepts(static_cast<int>(bids.dim(1)), static_cast<int>(bids.dim(2)))) {
    throw ShapeError("forward: " + name() + " is fixed at " +
                     std::to_string(cfg_.fixed_n) + "x" +
                     std::to_string(cfg_.fixed_m) + ", got " +
                     std::to_string(bids.dim(1)) + "x" +
                     std::to_string(bids.dim(2)));
  }
  switch (cfg_.arch) {
    case Arch::regretnet:
      return forward_regretnet(bids);
    case Arch::equivariantnet:
      return forward_equivariant(bids);
    case Arch::regretformer:
      return forward_regretformer(bids);
  }
  throw std::logic_error("unreachable");
}

ForwardOutput MechanismNetwork::forward_regretnet(const Tensor& bids) const {
  int64_t b = bids.dim(0), n = bids.dim(1), m = bids.dim(2);
  Tensor x = reshape(bids, {b, n * m});

  Tensor a = x;
  for (const auto& layer : blocks_->alloc_stack) a = dense_forward(a, layer);
  Tensor logits = reshape(a, {b, n + 1, m});

  Tensor p = x;
  for (const auto& layer : blocks_->pay_stack) p = dense_forward(p, layer);

  ForwardOutput out;
  out.allocation = column_softmax(logits);
  out.payment_fraction = sigmoid(p);
  out.payment = compute_payments(out.allocation, out.payment_fraction, bids);
  return out;
}

ForwardOutput MechanismNetwork::forward_equivariant(const Tensor& bids) const {
  int64_t b = bids.dim(0), n = bids.dim(1), m = bids.dim(2);
  Tensor x = reshape(bids, {b, 1, n, m});
  for (const auto& layer : blocks_->trunk) x = exchangeable_forward(x, layer);

  Tensor alloc_logits =
      reshape(exchangeable_forward(x, blocks_->alloc_head), {b, n, m});
  Tensor dummy = Tensor::zeros({b, 1, m});
  Tensor logits = concat({alloc_logits, dummy}, 1);

  Tensor pay_map = reshape(exchangeable_forward(x, blocks_->pay_head), {b, n, m});
  Tensor pay_pooled = reduce_mean(pay_map, 2);  // over items

  ForwardOutput out;
  out.allocation = column_softmax(logits);
  out.payment_fraction = sigmoid(pay_pooled);
  out.payment = compute_payments(out.allocation, out.payment_fraction, bids);
  return out;
}

ForwardOutput MechanismNetwork::forward_regretformer(const Tensor& bids) const {
  int64_t b = bids.dim(0), n = bids.dim(1), m = bids.dim(2);
  int64_t d = cfg_.hidden;

  Tensor input = bids;
  if (cfg_.use_pe && cfg_.pe_mode == PEMode::raw_input) {
    // Single-frequency item tag added directly to the (1-channel) bids.
    Tensor pe = slice(positional_encoding(m, 2), 1, 0, 1);  // [m, 1] of sin(j)
    input = add(input, reshape(pe, {1, 1, m}));
  }

  Tensor embedded = exchangeable_forward(reshape(input, {b, 1, n, m}),
                                         blocks_->embed);  // [B, d, n, m]
  Tensor features = permute(embedded, {0, 2, 3, 1});       // [B, n, m, d]

  if (cfg_.use_pe && cfg_.pe_mode == PEMode::embedded) {
    Tensor pe = reshape(positional_encoding(m, d), {1, 1, m, d});
    features = add(features, pe);
  }

  for (const auto& block : blocks_->att) {
    // Attention branches enter the residuals raw (pre-norm keeps them
    // scale-invariant); the tanh sits on the combining dense layer.
    Tensor item_in = reshape(features, {b * n, m, d});
    Tensor item_att = multi_head_attention(item_in, item_in, item_in, block.item);
    Tensor item_out = add(reshape(item_att, {b, n, m, d}), features);

    Tensor part_view = permute(features, {0, 2, 1, 3});  // [B, m, n, d]
    Tensor part_in = reshape(part_view, {b * m, n, d});
    Tensor part_att = multi_head_attention(part_in, part_in, part_in, block.part);
    Tensor part_out =
        add(permute(reshape(part_att, {b, m, n, d}), {0, 2, 1, 3}), features);

    Tensor merged = concat({item_out, part_out}, -1);  // [B, n, m, 2d]
    features = add(dense_forward(merged, block.combine), features);
  }

  Tensor part_mat = reduce_mean(features, 2);  // [B, n, d]
  Tensor item_mat = reduce_mean(features, 1);  // [B, m, d]

  Tensor logits = matmul(part_mat, transpose(item_mat));           // [B, n, m]
  Tensor dummy = neg(reduce_sum(logits, 1, true));                 // [B, 1, m]
  Tensor full_logits = concat({logits, dummy}, 1);                 // [B, n+1, m]

  ForwardOutput out;
  out.allocation = column_softmax(full_logits);
  out.payment_fraction = sigmoid(reduce_mean(part_mat, 2));  // [B, n]
  out.payment = compute_payments(out.allocation, out.payment_fraction, bids);
  return out;
}

}  // namespace auctionlab
