#pragma once

#include <functional>

#include "pf/tensor.hpp"

namespace pf {

using TensorFn = std::function<Tensor(const Tensor&)>;

// Compares reverse-mode gradients of the scalar-valued f against central
// finite differences evaluated in 64-bit. Returns the max relative error
// over elements, with relative defined as
//   |ad - fd| / max(|ad|, |fd|, 0.01 * max_j|grad_j|, 1e-6),
// so entries far below the gradient scale are measured semi-absolutely.
// h must lie in [1e-5, 1e-2].
double grad_check(const TensorFn& f, const Tensor& x, double h);

// The verification sweep behind the `gradcheck` CLI subcommand: every
// differentiable primitive against finite differences, 10 seeds each.
// Returns true when all pass; prints one line per op when verbose.
bool run_gradcheck_suite(bool verbose);

}  // namespace pf
