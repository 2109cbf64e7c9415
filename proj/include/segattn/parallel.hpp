#pragma once

#include <cstddef>
#include <functional>

namespace segattn {

// Worker count from SEGATTN_THREADS (default 1, minimum 1).
std::size_t thread_budget();

// Runs fn(i) for i in [0, n). Work is split into contiguous chunks; callers
// must not depend on execution order across indices.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace segattn
