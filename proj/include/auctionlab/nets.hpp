#pragma once

// The three mechanism networks mapping a bid matrix to an allocation over
// n+1 participants (the last row is the unallocated dummy) and payments.

#include <memory>
#include <string>
#include <vector>

#include "auctionlab/layers.hpp"
#include "auctionlab/sampling.hpp"
#include "auctionlab/tensor.hpp"

namespace auctionlab {

struct ForwardOutput {
  Tensor allocation;        // [B, n+1, m], columns sum to 1
  Tensor payment_fraction;  // [B, n] in [0, 1]
  Tensor payment;           // [B, n] >= 0
};

// p_i = p_hat_i * sum_j z_ij b_ij. z may carry the dummy row; it is ignored.
Tensor compute_payments(const Tensor& allocation, const Tensor& fractions,
                        const Tensor& bids);

class Mechanism {
 public:
  virtual ~Mechanism() = default;
  // bids: [B, n, m]
  virtual ForwardOutput forward(const Tensor& bids) const = 0;
  virtual bool accepts(int n, int m) const = 0;
  virtual std::string name() const = 0;
};

enum class Arch { regretnet, equivariantnet, regretformer };

std::string arch_name(Arch a);
Arch arch_from_name(const std::string& name);

enum class PEMode { embedded, raw_input };

struct NetConfig {
  Arch arch = Arch::regretformer;
  int layers = 3;         // dense or exchangeable depth (heads included)
  int hidden = 32;
  int att_blocks = 1;     // regretformer
  int heads = 2;          // regretformer
  bool use_pe = false;    // regretformer
  PEMode pe_mode = PEMode::embedded;
  int fixed_n = 0;        // regretnet input shape (also the padding frame)
  int fixed_m = 0;
};

// Appendix-table defaults per setting shape.
NetConfig default_net_config(Arch arch, int n, int m);

struct NamedParam {
  std::string name;
  Tensor tensor;
};

class ParamSet {
 public:
  Tensor add(const std::string& name, Tensor t);
  Tensor& at(const std::string& name);
  const Tensor& at(const std::string& name) const;
  const std::vector<NamedParam>& items() const { return items_; }
  std::vector<NamedParam>& items() { return items_; }

  int64_t value_count() const;
  void set_requires_grad(bool on);
  void zero_grads();
  uint64_t value_hash() const;  // FNV-1a over raw bytes
  bool all_finite() const;

 private:
  std::vector<NamedParam> items_;
};

class MechanismNetwork : public Mechanism {
 public:
  static MechanismNetwork build(const NetConfig& cfg, uint64_t seed);

  ForwardOutput forward(const Tensor& bids) const override;
  bool accepts(int n, int m) const override;
  std::string name() const override { return arch_name(cfg_.arch); }

  const NetConfig& config() const { return cfg_; }
  ParamSet& params() { return params_; }
  const ParamSet& params() const { return params_; }
  int64_t param_count() const { return params_.value_count(); }

  MechanismNetwork copy() const;  // deep copy of parameters

  // Replaces all parameters (names and shapes must match exactly).
  void load_params(const std::vector<NamedParam>& params);

 private:
  // Parameter views over the entries of params_ (shared storage).
  struct Blocks;
  NetConfig cfg_;
  ParamSet params_;
  std::shared_ptr<Blocks> blocks_;

  void wire();  // rebuilds the views after params_ changes identity

  ForwardOutput forward_regretnet(const Tensor& bids) const;
  ForwardOutput forward_equivariant(const Tensor& bids) const;
  ForwardOutput forward_regretformer(const Tensor& bids) const;
};

}  // namespace auctionlab
