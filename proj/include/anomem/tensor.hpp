#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <vector>

namespace anomem {

using Shape = std::vector<int>;

namespace detail {
struct TensorImpl;
}

// Dense 64-bit tensor handle. Copies share storage; values are treated as
// immutable once the tensor participates in recorded operations. Rank 0 is a
// scalar with one element.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<double> values);

  static Tensor zeros(const Shape& shape);
  static Tensor full(const Shape& shape, double v);
  static Tensor scalar(double v);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  int rank() const;
  long long size() const;

  std::span<const double> values() const;
  std::span<double> mutable_values();  // parameter updates only; not for recorded intermediates
  double value() const;                // scalar tensors
  double at(std::initializer_list<int> index) const;

  // Marks this tensor as a leaf that accumulates gradients.
  void mark_trainable();
  bool trainable() const;

  bool has_grad() const;
  std::span<const double> grad() const;
  void zero_grad();

  const std::shared_ptr<detail::TensorImpl>& impl() const { return impl_; }

 private:
  std::shared_ptr<detail::TensorImpl> impl_;
};

// Define-by-run gradient record. Constructing a Tape makes it the active
// recorder for the current thread; operations executed while it is active
// append backward closures. backward() replays them in reverse and may be
// called once. Tapes are strictly thread-local; share plain tensors across
// threads, never a live tape.
class Tape {
 public:
  Tape();
  ~Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Seeds d(loss) = 1 and accumulates gradients into every recorded input.
  // The loss must be a scalar recorded on this tape.
  void backward(const Tensor& loss);

  std::size_t op_count() const { return ops_.size(); }
  bool consumed() const { return consumed_; }

  static Tape* active();
  void append(std::function<void()> backprop);

 private:
  std::vector<std::function<void()>> ops_;
  Tape* prev_ = nullptr;
  bool consumed_ = false;
};

long long shape_size(const Shape& shape);
bool same_shape(const Shape& a, const Shape& b);
std::string shape_str(const Shape& shape);

}  // namespace anomem
