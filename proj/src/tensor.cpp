#include "auctionlab/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>
#include <unordered_set>

namespace auctionlab {

namespace {

thread_local Tape* g_active_tape = nullptr;
Precision g_precision = Precision::f64;
bool g_strict = true;

void round_store(std::vector<double>& v) {
  if (g_precision == Precision::f32) {
    for (double& x : v) x = static_cast<double>(static_cast<float>(x));
  }
}

bool all_finite(const std::vector<double>& v) {
  for (double x : v) {
    if (!std::isfinite(x)) return false;
  }
  return true;
}

void check_finite(const char* op, const TensorData& t, const char* role) {
  if (!g_strict) return;
  if (!all_finite(t.values)) {
    throw NumericError(std::string(op) + ": non-finite " + role + " tensor " +
                       shape_str(t.shape));
  }
}

[[noreturn]] void shape_fail(const char* op, const std::string& detail) {
  throw ShapeError(std::string(op) + ": " + detail);
}

std::vector<double>& grad_buf(const std::shared_ptr<TensorData>& t) {
  if (t->grad.empty()) t->grad.assign(t->values.size(), 0.0);
  return t->grad;
}

}  // namespace

int64_t numel(const Shape& shape) {
  int64_t n = 1;
  for (int64_t d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::vector<int64_t> strides_of(const Shape& shape) {
  std::vector<int64_t> st(shape.size(), 1);
  for (int i = static_cast<int>(shape.size()) - 2; i >= 0; --i) {
    st[i] = st[i + 1] * shape[i + 1];
  }
  return st;
}

void set_precision(Precision p) { g_precision = p; }
Precision precision() { return g_precision; }
void set_strict_checks(bool on) { g_strict = on; }
bool strict_checks() { return g_strict; }

// ---------------------------------------------------------------------------
// Tensor

Tensor make_result(Shape shape, std::vector<double> values) {
  auto d = std::make_shared<TensorData>();
  d->shape = std::move(shape);
  d->values = std::move(values);
  return Tensor(std::move(d));
}

Tensor Tensor::zeros(Shape shape) {
  int64_t n = numel(shape);
  return make_result(std::move(shape), std::vector<double>(n, 0.0));
}

Tensor Tensor::full(Shape shape, double value) {
  int64_t n = numel(shape);
  return make_result(std::move(shape), std::vector<double>(n, value));
}

Tensor Tensor::from(Shape shape, std::vector<double> values) {
  if (numel(shape) != static_cast<int64_t>(values.size())) {
    shape_fail("from", "shape " + shape_str(shape) + " does not match " +
                           std::to_string(values.size()) + " values");
  }
  return make_result(std::move(shape), std::move(values));
}

Tensor Tensor::scalar(double value) { return make_result({}, {value}); }

int64_t Tensor::dim(int axis) const {
  if (axis < 0) axis += rank();
  return d_->shape[static_cast<size_t>(axis)];
}

const std::vector<double>& Tensor::grad() const {
  if (d_->grad.empty()) {
    throw TapeError("grad requested but never populated");
  }
  return d_->grad;
}

void Tensor::zero_grad() { d_->grad.clear(); }

double Tensor::item() const {
  if (d_->values.size() != 1) {
    shape_fail("item", "tensor " + shape_str(d_->shape) + " is not scalar");
  }
  return d_->values[0];
}

double Tensor::at(std::initializer_list<int64_t> idx) const {
  if (idx.size() != d_->shape.size()) {
    shape_fail("at", "index rank mismatch for " + shape_str(d_->shape));
  }
  auto st = strides_of(d_->shape);
  int64_t off = 0;
  size_t k = 0;
  for (int64_t i : idx) off += i * st[k++];
  return d_->values[static_cast<size_t>(off)];
}

Tensor Tensor::detached() const { return make_result(d_->shape, d_->values); }

Tensor Tensor::clone() const {
  Tensor t = make_result(d_->shape, d_->values);
  t.set_requires_grad(d_->requires_grad);
  return t;
}

// ---------------------------------------------------------------------------
// Tape

TapeScope::TapeScope(Tape& tape) : previous_(g_active_tape) {
  g_active_tape = &tape;
}
TapeScope::~TapeScope() { g_active_tape = previous_; }
Tape* active_tape() { return g_active_tape; }

void Tape::clear() {
  records_.clear();
  consumed_ = false;
}

void Tape::backward(const Tensor& loss) {
  if (consumed_) throw TapeError("backward called twice on a consumed tape");
  if (loss.size() != 1) {
    throw TapeError("backward requires a scalar loss, got " +
                    shape_str(loss.shape()));
  }
  bool on_tape = false;
  for (const auto& r : records_) {
    if (r.output == loss.node()) {
      on_tape = true;
      break;
    }
  }
  if (!on_tape) throw TapeError("loss tensor is not on this tape");

  consumed_ = true;
  grad_buf(loss.node())[0] = 1.0;
  for (auto it = records_.rbegin(); it != records_.rend(); ++it) {
    if (!it->output->grad.empty()) it->backprop();
  }
  // Nodes that never received a gradient still satisfy the contract: zero.
  for (auto& r : records_) {
    for (auto& in : r.inputs) {
      if (in->requires_grad && in->grad.empty()) {
        in->grad.assign(in->values.size(), 0.0);
      }
    }
  }
  records_.clear();
}

namespace {

// Records the op if a tape is active and any input requires grad.
void record(const char* op, std::vector<Tensor> inputs, const Tensor& out,
            std::function<void()> backprop) {
  if (g_strict) {
    for (const auto& t : inputs) check_finite(op, *t.node(), "operand");
    check_finite(op, *out.node(), "result");
  }
  if (g_active_tape == nullptr) return;
  bool needs = false;
  for (const auto& t : inputs) {
    if (t.requires_grad()) needs = true;
  }
  if (!needs) return;
  out.node()->requires_grad = true;
  Tape::Record r;
  r.inputs.reserve(inputs.size());
  for (auto& t : inputs) r.inputs.push_back(t.node());
  r.output = out.node();
  r.backprop = std::move(backprop);
  g_active_tape->push(std::move(r));
}

// --- broadcasting helpers ---------------------------------------------------

Shape broadcast_shape(const char* op, const Shape& a, const Shape& b) {
  size_t rank = std::max(a.size(), b.size());
  Shape out(rank, 1);
  for (size_t i = 0; i < rank; ++i) {
    int64_t da = i < rank - a.size() ? 1 : a[i - (rank - a.size())];
    int64_t db = i < rank - b.size() ? 1 : b[i - (rank - b.size())];
    if (da != db && da != 1 && db != 1) {
      shape_fail(op, "cannot broadcast " + shape_str(a) + " with " + shape_str(b));
    }
    out[i] = std::max(da, db);
  }
  return out;
}

// Strides of `shape` aligned to a broadcast result of rank `out_rank`,
// with zero stride on broadcast axes.
std::vector<int64_t> broadcast_strides(const Shape& shape, size_t out_rank,
                                       const Shape& out_shape) {
  std::vector<int64_t> st(out_rank, 0);
  auto own = strides_of(shape);
  size_t offset = out_rank - shape.size();
  for (size_t i = 0; i < shape.size(); ++i) {
    if (shape[i] == out_shape[offset + i]) {
      st[offset + i] = own[i];
    } else {
      st[offset + i] = 0;  // broadcast axis
    }
  }
  return st;
}

template <class F>
void broadcast_apply(const Shape& out_shape, const Shape& ashape,
                     const std::vector<double>& av, const Shape& bshape,
                     const std::vector<double>& bv, std::vector<double>& out,
                     F&& f) {
  int64_t n = numel(out_shape);
  if (ashape == bshape) {
    for (int64_t i = 0; i < n; ++i) out[i] = f(av[i], bv[i]);
    return;
  }
  if (numel(bshape) == 1) {
    double b0 = bv[0];
    for (int64_t i = 0; i < n; ++i) out[i] = f(av[i], b0);
    return;
  }
  // Suffix fast path: b's shape equals the trailing dims of out.
  if (ashape == out_shape && bshape.size() <= out_shape.size() &&
      std::equal(bshape.begin(), bshape.end(),
                 out_shape.end() - static_cast<long>(bshape.size()))) {
    int64_t bs = numel(bshape);
    for (int64_t i = 0; i < n; ++i) out[i] = f(av[i], bv[i % bs]);
    return;
  }
  auto astr = broadcast_strides(ashape, out_shape.size(), out_shape);
  auto bstr = broadcast_strides(bshape, out_shape.size(), out_shape);
  std::vector<int64_t> coord(out_shape.size(), 0);
  int64_t aoff = 0, boff = 0;
  for (int64_t i = 0; i < n; ++i) {
    out[i] = f(av[aoff], bv[boff]);
    for (int k = static_cast<int>(out_shape.size()) - 1; k >= 0; --k) {
      coord[k]++;
      aoff += astr[k];
      boff += bstr[k];
      if (coord[k] < out_shape[k]) break;
      aoff -= astr[k] * out_shape[k];
      boff -= bstr[k] * out_shape[k];
      coord[k] = 0;
    }
  }
}

// Accumulates g (shaped out_shape) into a buffer shaped `target` that was
// broadcast up to out_shape.
void reduce_into(const Shape& out_shape, const std::vector<double>& g,
                 const Shape& target, std::vector<double>& acc,
                 const std::vector<double>* scale_by = nullptr) {
  int64_t n = numel(out_shape);
  if (target == out_shape) {
    if (scale_by) {
      for (int64_t i = 0; i < n; ++i) acc[i] += g[i] * (*scale_by)[i];
    } else {
      for (int64_t i = 0; i < n; ++i) acc[i] += g[i];
    }
    return;
  }
  auto tstr = broadcast_strides(target, out_shape.size(), out_shape);
  std::vector<int64_t> coord(out_shape.size(), 0);
  int64_t toff = 0;
  for (int64_t i = 0; i < n; ++i) {
    acc[toff] += scale_by ? g[i] * (*scale_by)[i] : g[i];
    for (int k = static_cast<int>(out_shape.size()) - 1; k >= 0; --k) {
      coord[k]++;
      toff += tstr[k];
      if (coord[k] < out_shape[k]) break;
      toff -= tstr[k] * out_shape[k];
      coord[k] = 0;
    }
  }
}

// Gathers operand values broadcast up to out_shape into a dense buffer.
std::vector<double> expand_to(const Shape& out_shape, const Shape& shape,
                              const std::vector<double>& v) {
  int64_t n = numel(out_shape);
  std::vector<double> out(n);
  if (shape == out_shape) {
    out = v;
    return out;
  }
  auto str = broadcast_strides(shape, out_shape.size(), out_shape);
  std::vector<int64_t> coord(out_shape.size(), 0);
  int64_t off = 0;
  for (int64_t i = 0; i < n; ++i) {
    out[i] = v[off];
    for (int k = static_cast<int>(out_shape.size()) - 1; k >= 0; --k) {
      coord[k]++;
      off += str[k];
      if (coord[k] < out_shape[k]) break;
      off -= str[k] * out_shape[k];
      coord[k] = 0;
    }
  }
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// Elementwise binary

namespace {

template <class FwdF>
Tensor binary_op(const char* op, const Tensor& a, const Tensor& b, FwdF&& f,
                 std::function<void(const Shape&, const std::vector<double>&,
                                    const Tensor&, const Tensor&, const Tensor&)>
                     backprop) {
  Shape out_shape = broadcast_shape(op, a.shape(), b.shape());
  std::vector<double> out(numel(out_shape));
  broadcast_apply(out_shape, a.shape(), a.values(), b.shape(), b.values(), out,
                  f);
  round_store(out);
  Tensor result = make_result(out_shape, std::move(out));
  if (backprop) {
    auto bp = [out_shape, a, b, result, backprop]() {
      backprop(out_shape, result.node()->grad, a, b, result);
    };
    record(op, {a, b}, result, bp);
  }
  return result;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return binary_op(
      "add", a, b, [](double x, double y) { return x + y; },
      [](const Shape& os, const std::vector<double>& g, const Tensor& a,
         const Tensor& b, const Tensor&) {
        if (a.requires_grad()) reduce_into(os, g, a.shape(), grad_buf(a.node()));
        if (b.requires_grad()) reduce_into(os, g, b.shape(), grad_buf(b.node()));
      });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary_op(
      "mul", a, b, [](double x, double y) { return x * y; },
      [](const Shape& os, const std::vector<double>& g, const Tensor& a,
         const Tensor& b, const Tensor&) {
        if (a.requires_grad()) {
          auto bexp = expand_to(os, b.shape(), b.values());
          reduce_into(os, g, a.shape(), grad_buf(a.node()), &bexp);
        }
        if (b.requires_grad()) {
          auto aexp = expand_to(os, a.shape(), a.values());
          reduce_into(os, g, b.shape(), grad_buf(b.node()), &aexp);
        }
      });
}

Tensor maximum(const Tensor& a, const Tensor& b) {
  return binary_op(
      "maximum", a, b, [](double x, double y) { return x >= y ? x : y; },
      [](const Shape& os, const std::vector<double>& g, const Tensor& a,
         const Tensor& b, const Tensor&) {
        auto aexp = expand_to(os, a.shape(), a.values());
        auto bexp = expand_to(os, b.shape(), b.values());
        std::vector<double> mask_a(g.size()), mask_b(g.size());
        for (size_t i = 0; i < g.size(); ++i) {
          bool pick_a = aexp[i] >= bexp[i];
          mask_a[i] = pick_a ? 1.0 : 0.0;
          mask_b[i] = pick_a ? 0.0 : 1.0;
        }
        if (a.requires_grad())
          reduce_into(os, g, a.shape(), grad_buf(a.node()), &mask_a);
        if (b.requires_grad())
          reduce_into(os, g, b.shape(), grad_buf(b.node()), &mask_b);
      });
}

Tensor minimum(const Tensor& a, const Tensor& b) {
  return neg(maximum(neg(a), neg(b)));
}

Tensor sub(const Tensor& a, const Tensor& b) { return add(a, neg(b)); }
Tensor add(const Tensor& a, double c) { return add(a, Tensor::scalar(c)); }
Tensor mul(const Tensor& a, double c) { return mul(a, Tensor::scalar(c)); }

// ---------------------------------------------------------------------------
// Elementwise unary

namespace {

// dfun maps (x, y) -> dy/dx so activations can reuse the output value.
template <class F, class DF>
Tensor unary_op(const char* op, const Tensor& a, F&& f, DF&& dfun) {
  std::vector<double> out(a.values().size());
  const auto& av = a.values();
  for (size_t i = 0; i < out.size(); ++i) out[i] = f(av[i]);
  round_store(out);
  Tensor result = make_result(a.shape(), std::move(out));
  record(op, {a}, result, [a, result, dfun]() {
    if (!a.requires_grad()) return;
    auto& ga = grad_buf(a.node());
    const auto& g = result.node()->grad;
    const auto& x = a.values();
    const auto& y = result.values();
    for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * dfun(x[i], y[i]);
  });
  return result;
}

}  // namespace

Tensor neg(const Tensor& a) {
  return unary_op(
      "neg", a, [](double x) { return -x; },
      [](double, double) { return -1.0; });
}

Tensor tanh(const Tensor& a) {
  return unary_op(
      "tanh", a, [](double x) { return std::tanh(x); },
      [](double, double y) { return 1.0 - y * y; });
}

Tensor sigmoid(const Tensor& a) {
  return unary_op(
      "sigmoid", a,
      [](double x) {
        if (x >= 0) {
          double e = std::exp(-x);
          return 1.0 / (1.0 + e);
        }
        double e = std::exp(x);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor exp(const Tensor& a) {
  return unary_op(
      "exp", a, [](double x) { return std::exp(x); },
      [](double, double y) { return y; });
}

Tensor log(const Tensor& a) {
  return unary_op(
      "log", a, [](double x) { return std::log(x); },
      [](double x, double) { return 1.0 / x; });
}

// ---------------------------------------------------------------------------
// matmul

namespace {

void gemm(const double* a, const double* b, double* c, int64_t p, int64_t q,
          int64_t r) {
  for (int64_t i = 0; i < p; ++i) {
    double* crow = c + i * r;
    for (int64_t k = 0; k < q; ++k) {
      double av = a[i * q + k];
      if (av == 0.0) continue;
      const double* brow = b + k * r;
      for (int64_t j = 0; j < r; ++j) crow[j] += av * brow[j];
    }
  }
}

// c[p x r] = a[p x q] @ b[r x q]^T
void gemm_bt(const double* a, const double* b, double* c, int64_t p, int64_t q,
             int64_t r) {
  for (int64_t i = 0; i < p; ++i) {
    for (int64_t j = 0; j < r; ++j) {
      double s = 0.0;
      const double* arow = a + i * q;
      const double* brow = b + j * q;
      for (int64_t k = 0; k < q; ++k) s += arow[k] * brow[k];
      c[i * r + j] += s;
    }
  }
}

// c[q x r] += a[p x q]^T @ g[p x r]
void gemm_at(const double* a, const double* g, double* c, int64_t p, int64_t q,
             int64_t r) {
  for (int64_t i = 0; i < p; ++i) {
    const double* arow = a + i * q;
    const double* grow = g + i * r;
    for (int64_t k = 0; k < q; ++k) {
      double av = arow[k];
      if (av == 0.0) continue;
      double* crow = c + k * r;
      for (int64_t j = 0; j < r; ++j) crow[j] += av * grow[j];
    }
  }
}

struct MatmulDims {
  int64_t batch;  // flattened broadcast batch
  int64_t p, q, r;
  bool a_batched, b_batched;
};

MatmulDims matmul_dims(const Tensor& a, const Tensor& b) {
  if (a.rank() < 2 || b.rank() < 2) {
    shape_fail("matmul", "operands must have rank >= 2, got " +
                             shape_str(a.shape()) + " and " +
                             shape_str(b.shape()));
  }
  int64_t p = a.dim(-2), qa = a.dim(-1);
  int64_t qb = b.dim(-2), r = b.dim(-1);
  if (qa != qb) {
    shape_fail("matmul", "inner extents differ: " + shape_str(a.shape()) +
                             " vs " + shape_str(b.shape()));
  }
  Shape abatch(a.shape().begin(), a.shape().end() - 2);
  Shape bbatch(b.shape().begin(), b.shape().end() - 2);
  if (!abatch.empty() && !bbatch.empty() && abatch != bbatch) {
    shape_fail("matmul", "batch extents differ: " + shape_str(a.shape()) +
                             " vs " + shape_str(b.shape()));
  }
  int64_t batch = std::max<int64_t>(numel(abatch), numel(bbatch));
  return {batch, p, qa, r, !abatch.empty(), !bbatch.empty()};
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  MatmulDims d = matmul_dims(a, b);
  Shape out_shape(d.a_batched ? a.shape() : b.shape());
  out_shape.resize(out_shape.size() - 2);
  out_shape.push_back(d.p);
  out_shape.push_back(d.r);

  std::vector<double> out(numel(out_shape), 0.0);
  const double* ap = a.values().data();
  const double* bp = b.values().data();
  for (int64_t n = 0; n < d.batch; ++n) {
    const double* an = ap + (d.a_batched ? n * d.p * d.q : 0);
    const double* bn = bp + (d.b_batched ? n * d.q * d.r : 0);
    gemm(an, bn, out.data() + n * d.p * d.r, d.p, d.q, d.r);
  }
  round_store(out);
  Tensor result = make_result(out_shape, std::move(out));

  record("matmul", {a, b}, result, [a, b, d, result]() {
    const auto& g = result.node()->grad;
    const double* ap = a.values().data();
    const double* bp = b.values().data();
    if (a.requires_grad()) {
      auto& ga = grad_buf(a.node());
      for (int64_t n = 0; n < d.batch; ++n) {
        const double* gn = g.data() + n * d.p * d.r;
        const double* bn = bp + (d.b_batched ? n * d.q * d.r : 0);
        double* gan = ga.data() + (d.a_batched ? n * d.p * d.q : 0);
        gemm_bt(gn, bn, gan, d.p, d.r, d.q);  // dA = G @ B^T
      }
    }
    if (b.requires_grad()) {
      auto& gb = grad_buf(b.node());
      for (int64_t n = 0; n < d.batch; ++n) {
        const double* gn = g.data() + n * d.p * d.r;
        const double* an = ap + (d.a_batched ? n * d.p * d.q : 0);
        double* gbn = gb.data() + (d.b_batched ? n * d.q * d.r : 0);
        gemm_at(an, gn, gbn, d.p, d.q, d.r);  // dB = A^T @ G
      }
    }
  });
  return result;
}

// ---------------------------------------------------------------------------
// Layout ops

namespace {

void permute_values(const Shape& in_shape, const std::vector<double>& in,
                    const std::vector<int>& perm, std::vector<double>& out) {
  size_t rank = in_shape.size();
  Shape out_shape(rank);
  for (size_t i = 0; i < rank; ++i) out_shape[i] = in_shape[perm[i]];
  auto in_str = strides_of(in_shape);
  std::vector<int64_t> mapped(rank);
  for (size_t i = 0; i < rank; ++i) mapped[i] = in_str[perm[i]];
  std::vector<int64_t> coord(rank, 0);
  int64_t ioff = 0;
  int64_t n = numel(in_shape);
  for (int64_t i = 0; i < n; ++i) {
    out[i] = in[ioff];
    for (int k = static_cast<int>(rank) - 1; k >= 0; --k) {
      coord[k]++;
      ioff += mapped[k];
      if (coord[k] < out_shape[k]) break;
      ioff -= mapped[k] * out_shape[k];
      coord[k] = 0;
    }
  }
}

}  // namespace

Tensor permute(const Tensor& a, const std::vector<int>& perm) {
  if (static_cast<int>(perm.size()) != a.rank()) {
    shape_fail("permute", "perm rank mismatch for " + shape_str(a.shape()));
  }
  Shape out_shape(a.rank());
  for (int i = 0; i < a.rank(); ++i) out_shape[i] = a.shape()[perm[i]];
  std::vector<double> out(a.size());
  permute_values(a.shape(), a.values(), perm, out);
  Tensor result = make_result(out_shape, std::move(out));
  record("permute", {a}, result, [a, perm, result]() {
    if (!a.requires_grad()) return;
    std::vector<int> inverse(perm.size());
    for (size_t i = 0; i < perm.size(); ++i) inverse[perm[i]] = static_cast<int>(i);
    std::vector<double> gin(a.size());
    permute_values(result.shape(), result.node()->grad, inverse, gin);
    auto& ga = grad_buf(a.node());
    for (size_t i = 0; i < gin.size(); ++i) ga[i] += gin[i];
  });
  return result;
}

Tensor transpose(const Tensor& a) {
  if (a.rank() < 2) shape_fail("transpose", "needs rank >= 2");
  std::vector<int> perm(a.rank());
  std::iota(perm.begin(), perm.end(), 0);
  std::swap(perm[perm.size() - 1], perm[perm.size() - 2]);
  return permute(a, perm);
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (numel(shape) != a.size()) {
    shape_fail("reshape", shape_str(a.shape()) + " -> " + shape_str(shape) +
                              " changes element count");
  }
  Tensor result = make_result(shape, a.values());
  record("reshape", {a}, result, [a, result]() {
    if (!a.requires_grad()) return;
    auto& ga = grad_buf(a.node());
    const auto& g = result.node()->grad;
    for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
  });
  return result;
}

Tensor concat(const std::vector<Tensor>& parts, int axis) {
  if (parts.empty()) shape_fail("concat", "no operands");
  int rank = parts[0].rank();
  if (axis < 0) axis += rank;
  Shape out_shape = parts[0].shape();
  int64_t total = 0;
  for (const auto& t : parts) {
    if (t.rank() != rank) shape_fail("concat", "rank mismatch");
    for (int i = 0; i < rank; ++i) {
      if (i != axis && t.shape()[i] != out_shape[i]) {
        shape_fail("concat", "extent mismatch at axis " + std::to_string(i) +
                                 ": " + shape_str(t.shape()) + " vs " +
                                 shape_str(out_shape));
      }
    }
    total += t.shape()[axis];
  }
  out_shape[axis] = total;

  auto out_str = strides_of(out_shape);
  int64_t outer = 1;
  for (int i = 0; i < axis; ++i) outer *= out_shape[i];
  int64_t inner = out_str[axis];

  std::vector<double> out(numel(out_shape));
  int64_t axis_off = 0;
  for (const auto& t : parts) {
    int64_t ax = t.shape()[axis];
    int64_t block = ax * inner;
    const auto& v = t.values();
    for (int64_t o = 0; o < outer; ++o) {
      std::copy_n(v.data() + o * block, block,
                  out.data() + o * total * inner + axis_off * inner);
    }
    axis_off += ax;
  }
  Tensor result = make_result(out_shape, std::move(out));

  std::vector<Tensor> inputs = parts;
  record("concat", inputs, result, [inputs, axis, outer, inner, total, result]() {
    const auto& g = result.node()->grad;
    int64_t axis_off = 0;
    for (const auto& t : inputs) {
      int64_t ax = t.shape()[axis];
      int64_t block = ax * inner;
      if (t.requires_grad()) {
        auto& gt = grad_buf(t.node());
        for (int64_t o = 0; o < outer; ++o) {
          const double* src = g.data() + o * total * inner + axis_off * inner;
          double* dst = gt.data() + o * block;
          for (int64_t i = 0; i < block; ++i) dst[i] += src[i];
        }
      }
      axis_off += ax;
    }
  });
  return result;
}

Tensor slice(const Tensor& a, int axis, int64_t start, int64_t count) {
  int rank = a.rank();
  if (axis < 0) axis += rank;
  if (axis < 0 || axis >= rank || start < 0 || count < 0 ||
      start + count > a.shape()[axis]) {
    shape_fail("slice", "range [" + std::to_string(start) + ", " +
                            std::to_string(start + count) + ") out of " +
                            shape_str(a.shape()) + " axis " +
                            std::to_string(axis));
  }
  Shape out_shape = a.shape();
  out_shape[axis] = count;
  auto in_str = strides_of(a.shape());
  int64_t outer = 1;
  for (int i = 0; i < axis; ++i) outer *= a.shape()[i];
  int64_t inner = in_str[axis];
  int64_t in_axis = a.shape()[axis];

  std::vector<double> out(numel(out_shape));
  for (int64_t o = 0; o < outer; ++o) {
    std::copy_n(a.values().data() + o * in_axis * inner + start * inner,
                count * inner, out.data() + o * count * inner);
  }
  Tensor result = make_result(out_shape, std::move(out));
  record("slice", {a}, result,
         [a, result, outer, inner, in_axis, start, count]() {
           if (!a.requires_grad()) return;
           auto& ga = grad_buf(a.node());
           const auto& g = result.node()->grad;
           for (int64_t o = 0; o < outer; ++o) {
             const double* src = g.data() + o * count * inner;
             double* dst = ga.data() + o * in_axis * inner + start * inner;
             for (int64_t i = 0; i < count * inner; ++i) dst[i] += src[i];
           }
         });
  return result;
}

// ---------------------------------------------------------------------------
// Softmax / layer norm

Tensor softmax_rows(const Tensor& a) {
  if (a.rank() < 1) shape_fail("softmax_rows", "needs rank >= 1");
  int64_t cols = a.dim(-1);
  int64_t rows = a.size() / cols;
  std::vector<double> out(a.size());
  const auto& v = a.values();
  for (int64_t r = 0; r < rows; ++r) {
    const double* row = v.data() + r * cols;
    double m = row[0];
    for (int64_t j = 1; j < cols; ++j) m = std::max(m, row[j]);
    double s = 0.0;
    for (int64_t j = 0; j < cols; ++j) {
      double e = std::exp(row[j] - m);
      out[r * cols + j] = e;
      s += e;
    }
    double inv = 1.0 / s;
    for (int64_t j = 0; j < cols; ++j) out[r * cols + j] *= inv;
  }
  round_store(out);
  Tensor result = make_result(a.shape(), std::move(out));
  record("softmax_rows", {a}, result, [a, result, rows, cols]() {
    if (!a.requires_grad()) return;
    auto& ga = grad_buf(a.node());
    const auto& g = result.node()->grad;
    const auto& y = result.values();
    for (int64_t r = 0; r < rows; ++r) {
      const double* yr = y.data() + r * cols;
      const double* gr = g.data() + r * cols;
      double dot = 0.0;
      for (int64_t j = 0; j < cols; ++j) dot += gr[j] * yr[j];
      double* gar = ga.data() + r * cols;
      for (int64_t j = 0; j < cols; ++j) gar[j] += yr[j] * (gr[j] - dot);
    }
  });
  return result;
}

Tensor layer_norm(const Tensor& a, const Tensor& gain, const Tensor& bias,
                  double eps) {
  int64_t d = a.dim(-1);
  if (gain.size() != d || bias.size() != d) {
    shape_fail("layer_norm", "gain/bias must have " + std::to_string(d) +
                                 " entries");
  }
  int64_t rows = a.size() / d;
  std::vector<double> out(a.size());
  std::vector<double> xhat(a.size());
  std::vector<double> inv_std(rows);
  const auto& v = a.values();
  const auto& gv = gain.values();
  const auto& bv = bias.values();
  for (int64_t r = 0; r < rows; ++r) {
    const double* row = v.data() + r * d;
    double mean = 0.0;
    for (int64_t j = 0; j < d; ++j) mean += row[j];
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (int64_t j = 0; j < d; ++j) {
      double c = row[j] - mean;
      var += c * c;
    }
    var /= static_cast<double>(d);
    double is = 1.0 / std::sqrt(var + eps);
    inv_std[r] = is;
    for (int64_t j = 0; j < d; ++j) {
      double xh = (row[j] - mean) * is;
      xhat[r * d + j] = xh;
      out[r * d + j] = xh * gv[j] + bv[j];
    }
  }
  round_store(out);
  Tensor result = make_result(a.shape(), std::move(out));
  auto xhat_p = std::make_shared<std::vector<double>>(std::move(xhat));
  auto istd_p = std::make_shared<std::vector<double>>(std::move(inv_std));
  record("layer_norm", {a, gain, bias}, result,
         [a, gain, bias, result, xhat_p, istd_p, rows, d]() {
           const auto& g = result.node()->grad;
           const auto& gv = gain.values();
           const auto& xh = *xhat_p;
           const auto& istd = *istd_p;
           if (a.requires_grad()) {
             auto& ga = grad_buf(a.node());
             for (int64_t r = 0; r < rows; ++r) {
               const double* gr = g.data() + r * d;
               const double* xr = xh.data() + r * d;
               double sum_gg = 0.0, sum_ggx = 0.0;
               for (int64_t j = 0; j < d; ++j) {
                 double gg = gr[j] * gv[j];
                 sum_gg += gg;
                 sum_ggx += gg * xr[j];
               }
               double inv_d = 1.0 / static_cast<double>(d);
               double* gar = ga.data() + r * d;
               for (int64_t j = 0; j < d; ++j) {
                 double gg = gr[j] * gv[j];
                 gar[j] += istd[r] * (gg - inv_d * sum_gg - xr[j] * inv_d * sum_ggx);
               }
             }
           }
           if (gain.requires_grad()) {
             auto& gg = grad_buf(gain.node());
             for (int64_t r = 0; r < rows; ++r) {
               for (int64_t j = 0; j < d; ++j) {
                 gg[j] += g[r * d + j] * xh[r * d + j];
               }
             }
           }
           if (bias.requires_grad()) {
             auto& gb = grad_buf(bias.node());
             for (int64_t r = 0; r < rows; ++r) {
               for (int64_t j = 0; j < d; ++j) gb[j] += g[r * d + j];
             }
           }
         });
  return result;
}

// ---------------------------------------------------------------------------
// Reductions

namespace {

struct AxisDims {
  int64_t outer, axis, inner;
};

AxisDims axis_dims(const char* op, const Shape& shape, int& axis) {
  int rank = static_cast<int>(shape.size());
  if (axis < 0) axis += rank;
  if (axis < 0 || axis >= rank) {
    shape_fail(op, "axis out of range for " + shape_str(shape));
  }
  int64_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= shape[i];
  for (int i = axis + 1; i < rank; ++i) inner *= shape[i];
  return {outer, shape[axis], inner};
}

Tensor reduce_impl(const char* op, const Tensor& a, int axis, bool keepdim,
                   bool mean) {
  AxisDims d = axis_dims(op, a.shape(), axis);
  Shape out_shape;
  for (int i = 0; i < a.rank(); ++i) {
    if (i == axis) {
      if (keepdim) out_shape.push_back(1);
    } else {
      out_shape.push_back(a.shape()[i]);
    }
  }
  double scale = mean ? 1.0 / static_cast<double>(d.axis) : 1.0;
  std::vector<double> out(d.outer * d.inner, 0.0);
  const auto& v = a.values();
  for (int64_t o = 0; o < d.outer; ++o) {
    for (int64_t k = 0; k < d.axis; ++k) {
      const double* src = v.data() + (o * d.axis + k) * d.inner;
      double* dst = out.data() + o * d.inner;
      for (int64_t i = 0; i < d.inner; ++i) dst[i] += src[i];
    }
  }
  if (mean) {
    for (double& x : out) x *= scale;
  }
  round_store(out);
  Tensor result = make_result(out_shape, std::move(out));
  record(op, {a}, result, [a, result, d, scale]() {
    if (!a.requires_grad()) return;
    auto& ga = grad_buf(a.node());
    const auto& g = result.node()->grad;
    for (int64_t o = 0; o < d.outer; ++o) {
      for (int64_t k = 0; k < d.axis; ++k) {
        double* dst = ga.data() + (o * d.axis + k) * d.inner;
        const double* src = g.data() + o * d.inner;
        for (int64_t i = 0; i < d.inner; ++i) dst[i] += src[i] * scale;
      }
    }
  });
  return result;
}

}  // namespace

Tensor reduce_sum(const Tensor& a, int axis, bool keepdim) {
  return reduce_impl("reduce_sum", a, axis, keepdim, false);
}

Tensor reduce_mean(const Tensor& a, int axis, bool keepdim) {
  return reduce_impl("reduce_mean", a, axis, keepdim, true);
}

Tensor sum_all(const Tensor& a) {
  double s = 0.0;
  for (double x : a.values()) s += x;
  std::vector<double> out{s};
  round_store(out);
  Tensor result = make_result({}, std::move(out));
  record("sum_all", {a}, result, [a, result]() {
    if (!a.requires_grad()) return;
    auto& ga = grad_buf(a.node());
    double g = result.node()->grad[0];
    for (double& x : ga) x += g;
  });
  return result;
}

Tensor max_scalars(const std::vector<Tensor>& scalars) {
  if (scalars.empty()) shape_fail("max_scalars", "no operands");
  Tensor m = scalars[0];
  for (size_t i = 1; i < scalars.size(); ++i) m = maximum(m, scalars[i]);
  return m;
}

// ---------------------------------------------------------------------------
// Generic dispatch

Tensor apply_primitive(const std::string& op, const std::vector<Tensor>& in,
                       const OpAttrs& attrs) {
  auto want = [&](size_t n) {
    if (in.size() != n) {
      shape_fail(op.c_str(), "expected " + std::to_string(n) + " operands, got " +
                                 std::to_string(in.size()));
    }
  };
  if (op == "add") { want(2); return add(in[0], in[1]); }
  if (op == "mul") { want(2); return mul(in[0], in[1]); }
  if (op == "sub") { want(2); return sub(in[0], in[1]); }
  if (op == "maximum") { want(2); return maximum(in[0], in[1]); }
  if (op == "neg") { want(1); return neg(in[0]); }
  if (op == "tanh") { want(1); return tanh(in[0]); }
  if (op == "sigmoid") { want(1); return sigmoid(in[0]); }
  if (op == "exp") { want(1); return exp(in[0]); }
  if (op == "log") { want(1); return log(in[0]); }
  if (op == "matmul") { want(2); return matmul(in[0], in[1]); }
  if (op == "permute") { want(1); return permute(in[0], attrs.perm); }
  if (op == "transpose") { want(1); return transpose(in[0]); }
  if (op == "reshape") { want(1); return reshape(in[0], attrs.shape); }
  if (op == "concat") { return concat(in, attrs.axis); }
  if (op == "slice") { want(1); return slice(in[0], attrs.axis, attrs.start, attrs.count); }
  if (op == "softmax_rows") { want(1); return softmax_rows(in[0]); }
  if (op == "layer_norm") { want(3); return layer_norm(in[0], in[1], in[2], attrs.eps); }
  if (op == "reduce_sum") { want(1); return reduce_sum(in[0], attrs.axis, attrs.keepdim); }
  if (op == "reduce_mean") { want(1); return reduce_mean(in[0], attrs.axis, attrs.keepdim); }
  if (op == "sum_all") { want(1); return sum_all(in[0]); }
  if (op == "max_scalars") { return max_scalars(in); }
  throw std::invalid_argument("unknown primitive: " + op);
}

std::vector<std::string> primitive_names() {
  return {"add",     "mul",      "sub",        "maximum",     "neg",
          "tanh",    "sigmoid",  "exp",        "log",         "matmul",
          "permute", "transpose", "reshape",   "concat",      "slice",
          "softmax_rows", "layer_norm", "reduce_sum", "reduce_mean",
          "sum_all", "max_scalars"};
}

// ---------------------------------------------------------------------------
// Finite differences

double finite_difference_check(const std::function<Tensor(const Tensor&)>& f,
                               const Tensor& x, double eps) {
  if (eps <= 0) throw std::invalid_argument("finite_difference_check: eps <= 0");

  Tensor probe = x.detached();
  probe.set_requires_grad(true);
  std::vector<double> analytic;
  {
    Tape tape;
    TapeScope scope(tape);
    Tensor loss = f(probe);
    if (loss.size() != 1) {
      throw std::invalid_argument("finite_difference_check: f must be scalar");
    }
    if (!std::isfinite(loss.item())) {
      throw NumericError("finite_difference_check: f returned non-finite value");
    }
    if (loss.requires_grad()) {
      tape.backward(loss);
    }
    analytic = probe.has_grad() ? probe.grad()
                                : std::vector<double>(probe.size(), 0.0);
  }

  auto eval = [&](const Tensor& point) {
    Tensor value = f(point);
    double y = value.item();
    if (!std::isfinite(y)) {
      throw NumericError("finite_difference_check: f returned non-finite value");
    }
    return y;
  };

  double worst = 0.0;
  Tensor moved = x.detached();
  auto& vals = moved.mutable_values();
  for (size_t i = 0; i < vals.size(); ++i) {
    double keep = vals[i];
    vals[i] = keep + eps;
    double up = eval(moved);
    vals[i] = keep - eps;
    double down = eval(moved);
    vals[i] = keep;
    double fd = (up - down) / (2.0 * eps);
    double err = std::abs(analytic[i] - fd) / (std::abs(fd) + 1e-8);
    worst = std::max(worst, err);
  }
  return worst;
}

}  // namespace auctionlab
