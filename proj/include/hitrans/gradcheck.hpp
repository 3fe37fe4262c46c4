#pragma once

#include <functional>
#include <span>

#include "hitrans/tensor.hpp"

namespace hitrans {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t samples = 0;
  // Where the worst error occurred.
  std::size_t worst_param = 0;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
};

// Compares analytic gradients of f against central differences
// (f(x+eps) - f(x-eps)) / (2 eps) at `samples` coordinates drawn uniformly over
// all parameter entries. Relative error is |a-n| / max(|a|, |n|, 1e-12).
// f must be deterministic (no train-mode dropout); eps must lie in [1e-7, 1e-3].
GradCheckResult grad_check(const std::function<Tensor()>& f, std::span<Tensor> params, Real eps,
                           std::size_t samples, Rng& rng);

}  // namespace hitrans
