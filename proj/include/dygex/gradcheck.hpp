#pragma once

#include <functional>
#include <vector>

#include "dygex/tensor.hpp"

namespace dygex {

// Compares analytic gradients against central finite differences.
//
// `loss_fn` must rebuild the computation from scratch for the given parameter
// values and return the loss; it is called twice per parameter entry with one
// entry nudged by +/-step. Returns the maximum over all entries of
//   |analytic - numeric| / max(1, |numeric|).
double finite_diff_max_rel_err(const std::function<double(const std::vector<Tensor>&)>& loss_fn,
                               std::vector<Tensor> params,
                               const std::vector<Tensor>& analytic_grads, double step = 1e-6);

}  // namespace dygex
