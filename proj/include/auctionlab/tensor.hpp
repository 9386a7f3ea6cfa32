#pragma once

// Dense-tensor engine with reverse-mode differentiation. Small on purpose:
// the primitive catalog is exactly what the layers, losses, and misreport
// optimization need. Tensors are immutable after construction except for
// gradient accumulation and explicit parameter updates via mutable_values().

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace auctionlab {

using Shape = std::vector<int64_t>;

int64_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);
std::vector<int64_t> strides_of(const Shape& shape);

struct ShapeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct TapeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Run-level numeric mode. f32 keeps double storage but rounds every primitive
// result (and optimizer writes) through float, so checkpoints in f32 are
// lossless.
enum class Precision { f64, f32 };
void set_precision(Precision p);
Precision precision();

// Strict mode scans operands/results for NaN/Inf on every primitive.
void set_strict_checks(bool on);
bool strict_checks();

struct TensorData {
  Shape shape;
  std::vector<double> values;
  bool requires_grad = false;
  std::vector<double> grad;  // empty until backward touches this node
};

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, double value);
  static Tensor from(Shape shape, std::vector<double> values);
  static Tensor scalar(double value);

  bool defined() const { return static_cast<bool>(d_); }
  const Shape& shape() const { return d_->shape; }
  int rank() const { return static_cast<int>(d_->shape.size()); }
  int64_t dim(int axis) const;
  int64_t size() const { return static_cast<int64_t>(d_->values.size()); }

  const std::vector<double>& values() const { return d_->values; }
  // Parameter updates only; callers must not hold a live tape over this node.
  std::vector<double>& mutable_values() { return d_->values; }

  bool requires_grad() const { return d_->requires_grad; }
  Tensor& set_requires_grad(bool on) {
    d_->requires_grad = on;
    return *this;
  }

  bool has_grad() const { return !d_->grad.empty(); }
  const std::vector<double>& grad() const;
  void zero_grad();

  double item() const;
  double at(std::initializer_list<int64_t> idx) const;

  Tensor detached() const;  // same values, fresh node, no grad
  Tensor clone() const;

  std::shared_ptr<TensorData> node() const { return d_; }

 private:
  explicit Tensor(std::shared_ptr<TensorData> d) : d_(std::move(d)) {}
  std::shared_ptr<TensorData> d_;
  friend Tensor make_result(Shape, std::vector<double>);
};

// ---------------------------------------------------------------------------
// Tape

class Tape {
 public:
  struct Record {
    std::vector<std::shared_ptr<TensorData>> inputs;
    std::shared_ptr<TensorData> output;
    std::function<void()> backprop;
  };

  // Populates grads of every requires_grad node reachable from loss; nodes on
  // the tape that are unreachable get zero grads. The tape is consumed.
  void backward(const Tensor& loss);

  void push(Record record) { records_.push_back(std::move(record)); }
  size_t size() const { return records_.size(); }
  bool consumed() const { return consumed_; }
  void clear();

 private:
  std::vector<Record> records_;
  bool consumed_ = false;
};

// Ops record onto the innermost active tape; with no tape in scope they run
// value-only (inference / misreport clamping etc.).
class TapeScope {
 public:
  explicit TapeScope(Tape& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* previous_;
};

Tape* active_tape();

// ---------------------------------------------------------------------------
// Primitive catalog

Tensor add(const Tensor& a, const Tensor& b);       // broadcast
Tensor mul(const Tensor& a, const Tensor& b);       // broadcast
Tensor sub(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, double c);
Tensor mul(const Tensor& a, double c);
Tensor neg(const Tensor& a);
Tensor tanh(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor maximum(const Tensor& a, const Tensor& b);   // ties route grad to a
Tensor minimum(const Tensor& a, const Tensor& b);

// a: [*, p, q], b: [q, r] or [*, q, r]; leading batch dims broadcast.
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor permute(const Tensor& a, const std::vector<int>& perm);
Tensor transpose(const Tensor& a);  // swaps the last two axes
Tensor reshape(const Tensor& a, Shape shape);
Tensor concat(const std::vector<Tensor>& parts, int axis);
Tensor slice(const Tensor& a, int axis, int64_t start, int64_t count);

Tensor softmax_rows(const Tensor& a);  // over the last axis, max-subtracted
Tensor layer_norm(const Tensor& a, const Tensor& gain, const Tensor& bias,
                  double eps = 1e-5);

Tensor reduce_sum(const Tensor& a, int axis, bool keepdim = false);
Tensor reduce_mean(const Tensor& a, int axis, bool keepdim = false);
Tensor sum_all(const Tensor& a);
Tensor max_scalars(const std::vector<Tensor>& scalars);

// ---------------------------------------------------------------------------
// Generic dispatch (op-id/attrs form); backs the catalog-wide gradient tests.

struct OpAttrs {
  int axis = 0;
  bool keepdim = false;
  double eps = 1e-5;
  double scalar = 0.0;
  Shape shape;
  std::vector<int> perm;
  int64_t start = 0;
  int64_t count = 0;
};

Tensor apply_primitive(const std::string& op, const std::vector<Tensor>& operands,
                       const OpAttrs& attrs = {});
std::vector<std::string> primitive_names();

// ---------------------------------------------------------------------------
// Gradient oracle: max over coordinates of
// |analytic - central difference| / (|central difference| + 1e-8).
double finite_difference_check(const std::function<Tensor(const Tensor&)>& f,
                               const Tensor& x, double eps = 1e-5);

}  // namespace auctionlab
