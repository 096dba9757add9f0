#pragma once

#include <cstddef>
#include <functional>

namespace udad {

/// Worker count used by parallel_for. Defaults to 1.
void set_thread_count(int n);
int thread_count();

/// Calls fn(i) for every i in [0, n). Indices are split into contiguous
/// blocks, one per worker. Callers must make fn(i) write only to storage
/// owned by index i so results do not depend on the worker count.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace udad
