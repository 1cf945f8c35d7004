#pragma once

#include <cstddef>
#include <functional>

namespace dygex {

// Global worker count for row-parallel kernels. 1 (the default) runs
// everything inline. Every kernel partitions by output row and each row is
// computed in a fixed serial order, so results are bit-identical for any
// thread count.
void set_num_threads(int n);
int num_threads();

// Calls fn(begin, end) on disjoint chunks of [0, n).
void parallel_for(std::size_t n, const std::function<void(std::size_t, std::size_t)>& fn);

}  // namespace dygex
