#pragma once

#include <cstdint>
#include <vector>

#include "anomem/tensor.hpp"

namespace anomem {

// Associative memory over learned prototypes. `weights` stores one prototype
// per column, [dim x count]. Retrieval iterates
//   q <- softmax(beta * q * W) * W^T
// per row until the max-norm change drops below `tol` or `max_iters` updates
// ran. Every executed update participates in the gradient.
struct HopfieldMemory {
  Tensor weights;
  double beta = 2.0;
  double tol = 1e-4;
  int max_iters = 16;
  bool normalize_queries = false;  // off: raw activations are used as queries

  int dim() const;
  int count() const;
};

// Prototypes drawn uniformly on the unit sphere. The weights are marked
// trainable; whether they actually receive gradients depends on the caller
// running under a tape.
HopfieldMemory make_memory(int dim, int count, double beta, double tol, int max_iters,
                           bool normalize_queries, std::uint64_t seed, std::uint64_t stream_tag);

// query: [B,dim] or [dim]; result has the same shape. Convergence is tracked
// per row, so batching never changes any individual row's output.
Tensor retrieve(const HopfieldMemory& mem, const Tensor& query);

// Label-gated pass-through: rows with y=1 are replaced by their retrieval,
// rows with y=0 pass unchanged. y must hold exactly one label per row.
Tensor mem_gate(const HopfieldMemory& mem, const Tensor& z, const std::vector<int>& y);

// Applies retrieve to every depth vector of a feature map ([H,W,C] or
// [B,H,W,C]).
Tensor spatial_retrieve(const HopfieldMemory& mem, const Tensor& maps);

// Diagnostics over prototype columns.
double min_prototype_distance(const Tensor& weights);
double max_prototype_distance(const Tensor& weights);
std::vector<double> prototype_norms(const Tensor& weights);

}  // namespace anomem
