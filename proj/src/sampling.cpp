#include "auctionlab/sampling.hpp"

#include <stdexcept>

namespace auctionlab {

namespace {

constexpr uint64_t kGolden = 0x9e3779b97f4a7c15ull;

uint64_t mix64(uint64_t z) {
  z += kGolden;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

}  // namespace

SeededStream::SeededStream(uint64_t seed, uint64_t substream)
    : state_(mix64(seed) + (substream + 1) * kGolden) {}

uint64_t SeededStream::next_u64() {
  state_ += kGolden;
  uint64_t z = state_;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

double SeededStream::next_unit() {
  return static_cast<double>(next_u64() >> 11) * 0x1p-53;
}

double SeededStream::uniform(double lo, double hi) {
  return lo + (hi - lo) * next_unit();
}

uint64_t SeededStream::next_below(uint64_t n) {
  if (n == 0) return 0;
  uint64_t limit = UINT64_MAX - UINT64_MAX % n;
  uint64_t x = next_u64();
  while (x >= limit) x = next_u64();
  return x % n;
}

SettingSpec SettingSpec::uniform01(int n, int m) {
  SettingSpec s;
  s.n = n;
  s.m = m;
  s.lo.assign(static_cast<size_t>(m), 0.0);
  s.hi.assign(static_cast<size_t>(m), 1.0);
  s.label = std::to_string(n) + "x" + std::to_string(m);
  s.validate();
  return s;
}

SettingSpec SettingSpec::box(int n, std::vector<double> lo,
                             std::vector<double> hi) {
  SettingSpec s;
  s.n = n;
  s.m = static_cast<int>(lo.size());
  s.lo = std::move(lo);
  s.hi = std::move(hi);
  s.label = std::to_string(s.n) + "x" + std::to_string(s.m) + "-box";
  s.validate();
  return s;
}

bool SettingSpec::unit_box() const {
  for (double v : lo) {
    if (v != 0.0) return false;
  }
  for (double v : hi) {
    if (v != 1.0) return false;
  }
  return true;
}

void SettingSpec::validate() const {
  if (n < 1 || m < 1) {
    throw std::invalid_argument("setting: need n >= 1 and m >= 1");
  }
  if (lo.size() != static_cast<size_t>(m) || hi.size() != static_cast<size_t>(m)) {
    throw std::invalid_argument("setting: per-item bounds must have m entries");
  }
  for (int j = 0; j < m; ++j) {
    if (!(hi[static_cast<size_t>(j)] > lo[static_cast<size_t>(j)])) {
      throw std::invalid_argument("setting: hi must exceed lo per item");
    }
  }
}

void MultiSettingSpec::validate() const {
  if (settings.empty()) {
    throw std::invalid_argument("multi-setting: empty list");
  }
  for (const auto& s : settings) s.validate();
}

SettingSpec setting_preset(const std::string& name) {
  if (name == "asymmetric") {
    // one bidder, two items with non-identical supports
    SettingSpec s = SettingSpec::box(1, {4.0, 4.0}, {16.0, 7.0});
    s.label = "asymmetric";
    return s;
  }
  auto x = name.find('x');
  if (x != std::string::npos) {
    int n = std::stoi(name.substr(0, x));
    int m = std::stoi(name.substr(x + 1));
    return SettingSpec::uniform01(n, m);
  }
  throw std::invalid_argument("unknown setting preset: " + name);
}

MultiSettingSpec multi_setting_preset(const std::string& name) {
  auto build = [](std::initializer_list<std::pair<int, int>> list) {
    MultiSettingSpec multi;
    for (auto [n, m] : list) multi.settings.push_back(SettingSpec::uniform01(n, m));
    return multi;
  };
  if (name == "multi") {
    return build({{2, 3}, {2, 4}, {2, 5}, {2, 6}, {2, 7},
                  {3, 3}, {3, 4}, {3, 5}, {3, 6}, {3, 7}});
  }
  if (name == "multi-train") {
    return build({{2, 3}, {2, 5}, {2, 7}, {3, 4}, {3, 6}});
  }
  if (name == "multi-test") {
    return build({{2, 4}, {2, 6}, {3, 3}, {3, 5}, {3, 7}});
  }
  throw std::invalid_argument("unknown multi-setting preset: " + name);
}

bool is_multi_preset(const std::string& name) {
  return name == "multi" || name == "multi-train" || name == "multi-test";
}

Tensor sample_profiles(const SettingSpec& spec, int64_t count, SeededStream& rng) {
  if (count < 1) throw std::invalid_argument("sample_profiles: count < 1");
  spec.validate();
  std::vector<double> v(static_cast<size_t>(count * spec.n * spec.m));
  size_t idx = 0;
  for (int64_t l = 0; l < count; ++l) {
    for (int i = 0; i < spec.n; ++i) {
      for (int j = 0; j < spec.m; ++j) {
        v[idx++] = rng.uniform(spec.lo[static_cast<size_t>(j)],
                               spec.hi[static_cast<size_t>(j)]);
      }
    }
  }
  return Tensor::from({count, spec.n, spec.m}, std::move(v));
}

}  // namespace auctionlab
