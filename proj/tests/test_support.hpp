#pragma once

#include <random>

#include "detective/ops.hpp"
#include "detective/tensor.hpp"

namespace detective::testing {

inline Tensor random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> dist(lo, hi);
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = dist(rng);
  return t;
}

// Random linear functional of y, so every output coordinate gets a generic
// non-zero weight in gradient checks.
inline Var random_projection(Var y, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Var w = y.tape->constant(random_tensor(y.shape(), rng, 0.5, 1.5));
  return sum(hadamard(y, w));
}

}  // namespace detective::testing
