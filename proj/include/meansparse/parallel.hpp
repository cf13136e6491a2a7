#pragma once

#include <cstddef>
#include <functional>

namespace meansparse {

// Process-wide worker count; 1 means everything runs on the calling thread.
void set_num_threads(std::size_t n);
std::size_t num_threads();

// Calls fn(i) for i in [0, n). Indices are split into contiguous chunks, one
// per worker. fn must only write state owned by index i, which makes the
// result independent of the worker count. The first exception thrown by any
// worker (lowest chunk first) is rethrown after all workers join.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace meansparse
