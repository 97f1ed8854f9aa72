#include "anomem/tensor.hpp"

#include <cmath>
#include <sstream>

#include "anomem/errors.hpp"
#include "tensor_impl.hpp"

namespace anomem {

long long shape_size(const Shape& shape) {
  long long n = 1;
  for (int d : shape) n *= d;
  return n;
}

bool same_shape(const Shape& a, const Shape& b) { return a == b; }

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape, std::vector<double> values) {
  for (int d : shape) {
    if (d <= 0) throw DimensionError("tensor dimensions must be positive, got " + shape_str(shape));
  }
  if (shape_size(shape) != static_cast<long long>(values.size())) {
    throw DimensionError("value count " + std::to_string(values.size()) +
                         " does not match shape " + shape_str(shape));
  }
  impl_ = std::make_shared<detail::TensorImpl>();
  impl_->shape = std::move(shape);
  impl_->values = std::move(values);
}

Tensor Tensor::zeros(const Shape& shape) {
  return Tensor(shape, std::vector<double>(shape_size(shape), 0.0));
}

Tensor Tensor::full(const Shape& shape, double v) {
  return Tensor(shape, std::vector<double>(shape_size(shape), v));
}

Tensor Tensor::scalar(double v) { return Tensor(Shape{}, {v}); }

static const detail::TensorImpl& deref(const std::shared_ptr<detail::TensorImpl>& p) {
  if (!p) throw StateError("operation on an empty tensor");
  return *p;
}

const Shape& Tensor::shape() const { return deref(impl_).shape; }
int Tensor::rank() const { return static_cast<int>(deref(impl_).shape.size()); }
long long Tensor::size() const { return static_cast<long long>(deref(impl_).values.size()); }

std::span<const double> Tensor::values() const {
  const auto& t = deref(impl_);
  return {t.values.data(), t.values.size()};
}

std::span<double> Tensor::mutable_values() {
  deref(impl_);
  return {impl_->values.data(), impl_->values.size()};
}

double Tensor::value() const {
  const auto& t = deref(impl_);
  if (t.values.size() != 1) {
    throw DimensionError("value() requires a single-element tensor, shape is " +
                         shape_str(t.shape));
  }
  return t.values[0];
}

double Tensor::at(std::initializer_list<int> index) const {
  const auto& t = deref(impl_);
  if (index.size() != t.shape.size()) {
    throw DimensionError("index rank mismatch for shape " + shape_str(t.shape));
  }
  long long flat = 0;
  int axis = 0;
  for (int i : index) {
    if (i < 0 || i >= t.shape[axis]) throw DimensionError("index out of range");
    flat = flat * t.shape[axis] + i;
    ++axis;
  }
  return t.values[flat];
}

void Tensor::mark_trainable() {
  deref(impl_);
  impl_->trainable = true;
}
bool Tensor::trainable() const { return deref(impl_).trainable; }

bool Tensor::has_grad() const { return !deref(impl_).grad.empty(); }

std::span<const double> Tensor::grad() const {
  const auto& t = deref(impl_);
  if (t.grad.empty()) throw StateError("tensor has no gradient buffer; run backward first");
  return {t.grad.data(), t.grad.size()};
}

void Tensor::zero_grad() {
  deref(impl_);
  impl_->grad.clear();
}

namespace {
thread_local Tape* t_active = nullptr;
}

Tape::Tape() {
  prev_ = t_active;
  t_active = this;
}

Tape::~Tape() { t_active = prev_; }

Tape* Tape::active() { return t_active; }

void Tape::append(std::function<void()> backprop) { ops_.push_back(std::move(backprop)); }

void Tape::backward(const Tensor& loss) {
  if (consumed_) throw StateError("backward already ran on this tape");
  if (!loss.defined() || loss.size() != 1) {
    throw DimensionError("backward requires a scalar loss");
  }
  if (loss.impl()->owner != this) {
    throw StateError("loss was not recorded on this tape");
  }
  consumed_ = true;
  detail::grad_acc(loss.impl())[0] = 1.0;
  for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) (*it)();
}

namespace detail {

void check_finite(const Tensor& t, const char* name) {
  for (double v : t.values()) {
    if (!std::isfinite(v)) {
      throw NumericError(std::string("non-finite value produced by ") + name);
    }
  }
}

void finalize_op(const char* name, const Tensor& out,
                 std::initializer_list<const Tensor*> inputs,
                 const std::function<void()>& backprop) {
  check_finite(out, name);
  Tape* tape = Tape::active();
  if (!tape || tape->consumed()) return;
  bool need = false;
  for (const Tensor* in : inputs) {
    if (in->defined() && needs_grad(*in->impl())) {
      need = true;
      break;
    }
  }
  if (!need) return;
  out.impl()->on_tape = true;
  out.impl()->owner = tape;
  tape->append(backprop);
}

}  // namespace detail

}  // namespace anomem
