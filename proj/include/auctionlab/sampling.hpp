#pragma once

// Valuation samplers, setting specifications, and seeded streams.
//
// SeededStream is splitmix64. Substream k of seed s starts from
// mix(s) + (k+1) * 0x9e3779b97f4a7c15, so distinct substream ids can never
// collide for a fixed seed. Unit doubles are (x >> 11) * 2^-53, which keeps
// draws identical across platforms.

#include <cstdint>
#include <string>
#include <vector>

#include "auctionlab/tensor.hpp"

namespace auctionlab {

class SeededStream {
 public:
  explicit SeededStream(uint64_t seed, uint64_t substream = 0);

  uint64_t next_u64();
  double next_unit();                      // [0, 1)
  double uniform(double lo, double hi);
  uint64_t next_below(uint64_t n);         // unbiased via rejection

  uint64_t state() const { return state_; }
  void restore(uint64_t state) { state_ = state; }

 private:
  uint64_t state_;
};

struct SettingSpec {
  int n = 1;
  int m = 1;
  std::vector<double> lo;  // per-item lower bounds
  std::vector<double> hi;  // per-item upper bounds
  std::string label;

  static SettingSpec uniform01(int n, int m);
  // §-style asymmetric box: per-item (lo, hi) pairs.
  static SettingSpec box(int n, std::vector<double> lo, std::vector<double> hi);

  bool unit_box() const;
  void validate() const;
};

struct MultiSettingSpec {
  std::vector<SettingSpec> settings;

  void validate() const;
};

// Named presets used across the experiments.
SettingSpec setting_preset(const std::string& name);       // "1x2", "2x2", ..., "asymmetric"
MultiSettingSpec multi_setting_preset(const std::string& name);  // "multi", "multi-train", "multi-test"
bool is_multi_preset(const std::string& name);

// count i.i.d. profiles; returns a [count, n, m] tensor.
Tensor sample_profiles(const SettingSpec& spec, int64_t count, SeededStream& rng);

}  // namespace auctionlab
