#include "auctionlab/checkpoint.hpp"

#include <cstring>
#include <fstream>

namespace auctionlab {

namespace {

constexpr char kMagic[8] = {'A', 'L', 'A', 'B', 'C', 'K', 'P', '1'};
constexpr uint32_t kVersion = 1;

uint64_t fnv1a(const unsigned char* data, size_t len) {
  uint64_t h = 1469598103934665603ull;
  for (size_t i = 0; i < len; ++i) {
    h ^= data[i];
    h *= 1099511628211ull;
  }
  return h;
}

struct Writer {
  std::vector<unsigned char> out;

  void raw(const void* p, size_t len) {
    const auto* b = static_cast<const unsigned char*>(p);
    out.insert(out.end(), b, b + len);
  }
  void u8(uint8_t v) { raw(&v, 1); }
  void u32(uint32_t v) { raw(&v, 4); }
  void u64(uint64_t v) { raw(&v, 8); }
  void i64(int64_t v) { raw(&v, 8); }
  void f64(double v) { raw(&v, 8); }
  void str(const std::string& s) {
    u32(static_cast<uint32_t>(s.size()));
    raw(s.data(), s.size());
  }
  void doubles(const std::vector<double>& v, Precision p) {
    u8(p == Precision::f32 ? 1 : 0);
    u64(v.size());
    if (p == Precision::f32) {
      for (double x : v) {
        float f = static_cast<float>(x);
        raw(&f, 4);
      }
    } else {
      raw(v.data(), v.size() * sizeof(double));
    }
  }
};

struct Reader {
  const unsigned char* data;
  size_t len;
  size_t at = 0;

  void need(size_t n) const {
    if (at + n > len) throw FormatError("checkpoint: truncated file");
  }
  void raw(void* p, size_t n) {
    need(n);
    std::memcpy(p, data + at, n);
    at += n;
  }
  uint8_t u8() { uint8_t v; raw(&v, 1); return v; }
  uint32_t u32() { uint32_t v; raw(&v, 4); return v; }
  uint64_t u64() { uint64_t v; raw(&v, 8); return v; }
  int64_t i64() { int64_t v; raw(&v, 8); return v; }
  double f64() { double v; raw(&v, 8); return v; }
  std::string str() {
    uint32_t n = u32();
    need(n);
    std::string s(reinterpret_cast<const char*>(data + at), n);
    at += n;
    return s;
  }
  std::vector<double> doubles() {
    uint8_t tag = u8();
    uint64_t n = u64();
    std::vector<double> v(n);
    if (tag == 1) {
      need(n * 4);
      for (uint64_t i = 0; i < n; ++i) {
        float f;
        std::memcpy(&f, data + at, 4);
        at += 4;
        v[i] = static_cast<double>(f);
      }
    } else if (tag == 0) {
      raw(v.data(), n * sizeof(double));
    } else {
      throw FormatError("checkpoint: unknown dtype tag");
    }
    return v;
  }
};

}  // namespace

Checkpoint make_checkpoint(const MechanismNetwork& net, const TrainState& state,
                           const AdamOptimizer& opt, const BatchSource* source) {
  Checkpoint ckpt;
  ckpt.version = kVersion;
  ckpt.net_config = net.config();
  ckpt.stored_precision = precision();
  ckpt.state = state;
  for (const auto& p : net.params().items()) {
    ckpt.params.push_back({p.name, p.tensor.detached()});
  }
  ckpt.adam_t = opt.iterations();
  ckpt.adam_m = opt.first_moments();
  ckpt.adam_v = opt.second_moments();
  if (source != nullptr) {
    ckpt.picker_state = source->picker_state();
    ckpt.cursors = source->cursors();
  }
  return ckpt;
}

std::vector<unsigned char> serialize_checkpoint(const Checkpoint& ckpt) {
  Writer w;
  w.raw(kMagic, 8);
  w.u32(ckpt.version);

  const NetConfig& c = ckpt.net_config;
  w.str(arch_name(c.arch));
  w.u32(static_cast<uint32_t>(c.layers));
  w.u32(static_cast<uint32_t>(c.hidden));
  w.u32(static_cast<uint32_t>(c.att_blocks));
  w.u32(static_cast<uint32_t>(c.heads));
  w.u8(c.use_pe ? 1 : 0);
  w.u8(c.pe_mode == PEMode::raw_input ? 1 : 0);
  w.u32(static_cast<uint32_t>(c.fixed_n));
  w.u32(static_cast<uint32_t>(c.fixed_m));
  w.u8(ckpt.stored_precision == Precision::f32 ? 1 : 0);

  const TrainState& s = ckpt.state;
  w.u8(s.objective == Objective::budget ? 0 : 1);
  w.i64(s.iteration);
  w.i64(s.skipped_steps);
  w.f64(s.dual.gamma);
  w.f64(s.dual.gamma_lr);
  w.f64(s.dual.r_max);
  w.f64(s.dual.r_max_end);
  w.f64(s.dual.r_max_mult);
  w.doubles(s.lagrangian.lambdas, Precision::f64);
  w.f64(s.lagrangian.rho);
  w.f64(s.lagrangian.rho_lr);
  w.u32(static_cast<uint32_t>(s.lagrangian.update_period));

  w.u64(ckpt.picker_state);
  w.u64(ckpt.cursors.size());
  for (int64_t cur : ckpt.cursors) w.i64(cur);

  w.u64(ckpt.params.size());
  for (const auto& p : ckpt.params) {
    w.str(p.name);
    w.u32(static_cast<uint32_t>(p.tensor.rank()));
    for (int64_t d : p.tensor.shape()) w.i64(d);
    w.doubles(p.tensor.values(), ckpt.stored_precision);
  }

  w.i64(ckpt.adam_t);
  w.u64(ckpt.adam_m.size());
  for (const auto& m : ckpt.adam_m) w.doubles(m, Precision::f64);
  for (const auto& v : ckpt.adam_v) w.doubles(v, Precision::f64);

  uint64_t checksum = fnv1a(w.out.data() + 8, w.out.size() - 8);
  w.u64(checksum);
  return std::move(w.out);
}

Checkpoint parse_checkpoint(const std::vector<unsigned char>& bytes) {
  if (bytes.size() < 8 + 4 + 8 || std::memcmp(bytes.data(), kMagic, 8) != 0) {
    throw FormatError("checkpoint: bad magic");
  }
  uint64_t stored;
  std::memcpy(&stored, bytes.data() + bytes.size() - 8, 8);
  uint64_t actual = fnv1a(bytes.data() + 8, bytes.size() - 16);
  if (stored != actual) throw FormatError("checkpoint: checksum failure");

  Reader r{bytes.data(), bytes.size() - 8, 8};
  Checkpoint ckpt;
  ckpt.version = r.u32();
  if (ckpt.version != kVersion) {
    throw FormatError("checkpoint: unsupported version " +
                      std::to_string(ckpt.version));
  }

  NetConfig& c = ckpt.net_config;
  c.arch = arch_from_name(r.str());
  c.layers = static_cast<int>(r.u32());
  c.hidden = static_cast<int>(r.u32());
  c.att_blocks = static_cast<int>(r.u32());
  c.heads = static_cast<int>(r.u32());
  c.use_pe = r.u8() != 0;
  c.pe_mode = r.u8() != 0 ? PEMode::raw_input : PEMode::embedded;
  c.fixed_n = static_cast<int>(r.u32());
  c.fixed_m = static_cast<int>(r.u32());
  ckpt.stored_precision = r.u8() != 0 ? Precision::f32 : Precision::f64;

  TrainState& s = ckpt.state;
  s.objective = r.u8() == 0 ? Objective::budget : Objective::lagrangian;
  s.iteration = r.i64();
  s.skipped_steps = r.i64();
  s.dual.gamma = r.f64();
  s.dual.gamma_lr = r.f64();
  s.dual.r_max = r.f64();
  s.dual.r_max_end = r.f64();
  s.dual.r_max_mult = r.f64();
  s.lagrangian.lambdas = r.doubles();
  s.lagrangian.rho = r.f64();
  s.lagrangian.rho_lr = r.f64();
  s.lagrangian.update_period = static_cast<int>(r.u32());

  ckpt.picker_state = r.u64();
  uint64_t ncur = r.u64();
  ckpt.cursors.resize(ncur);
  for (uint64_t i = 0; i < ncur; ++i) ckpt.cursors[i] = r.i64();

  uint64_t nparams = r.u64();
  for (uint64_t i = 0; i < nparams; ++i) {
    std::string name = r.str();
    uint32_t rank = r.u32();
    Shape shape(rank);
    for (uint32_t d = 0; d < rank; ++d) shape[d] = r.i64();
    std::vector<double> values = r.doubles();
    ckpt.params.push_back({name, Tensor::from(std::move(shape), std::move(values))});
  }

  ckpt.adam_t = r.i64();
  uint64_t groups = r.u64();
  ckpt.adam_m.resize(groups);
  ckpt.adam_v.resize(groups);
  for (uint64_t i = 0; i < groups; ++i) ckpt.adam_m[i] = r.doubles();
  for (uint64_t i = 0; i < groups; ++i) ckpt.adam_v[i] = r.doubles();

  if (r.at != r.len) throw FormatError("checkpoint: trailing bytes");
  return ckpt;
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  auto bytes = serialize_checkpoint(ckpt);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("checkpoint: cannot open " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FormatError("checkpoint: write failed for " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("checkpoint: cannot open " + path);
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
  return parse_checkpoint(bytes);
}

MechanismNetwork restore_network(const Checkpoint& ckpt) {
  MechanismNetwork net = MechanismNetwork::build(ckpt.net_config, 0);
  net.load_params(ckpt.params);
  return net;
}

void restore_training(const Checkpoint& ckpt, AdamOptimizer& opt,
                      BatchSource* source) {
  opt.restore(ckpt.adam_t, ckpt.adam_m, ckpt.adam_v);
  if (source != nullptr) {
    source->restore_picker_state(ckpt.picker_state);
    source->restore_cursors(ckpt.cursors);
  }
}

}  // namespace auctionlab
