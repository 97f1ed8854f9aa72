#pragma once

// Internal storage layout plus the helpers every operation uses to hook into
// the active tape. Not part of the public surface.

#include <span>
#include <vector>

#include "anomem/tensor.hpp"

namespace anomem::detail {

struct TensorImpl {
  Shape shape;
  std::vector<double> values;
  std::vector<double> grad;  // sized on first use
  bool trainable = false;
  bool on_tape = false;      // derived from a trainable leaf under an active tape
  const Tape* owner = nullptr;
};

inline bool needs_grad(const TensorImpl& t) { return t.trainable || t.on_tape; }

// Gradient accumulator view, allocating zeros on first access.
inline std::span<double> grad_acc(const std::shared_ptr<TensorImpl>& t) {
  if (t->grad.empty()) t->grad.assign(t->values.size(), 0.0);
  return {t->grad.data(), t->grad.size()};
}

// Output-side gradient view for backward closures. If the output never
// received a gradient it contributes zeros, which keeps dead branches inert.
inline std::span<const double> grad_of(const std::shared_ptr<TensorImpl>& t) {
  if (t->grad.empty()) t->grad.assign(t->values.size(), 0.0);
  return {t->grad.data(), t->grad.size()};
}

// Validates the freshly computed output and, when a tape is active and some
// input carries gradient state, attaches the backward closure. `name` is the
// primitive name surfaced by numeric errors.
void finalize_op(const char* name, const Tensor& out,
                 std::initializer_list<const Tensor*> inputs,
                 const std::function<void()>& backprop);

void check_finite(const Tensor& t, const char* name);

}  // namespace anomem::detail
