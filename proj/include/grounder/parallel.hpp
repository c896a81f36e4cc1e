#pragma once

#include <cstddef>
#include <functional>

namespace grounder {

// Worker count from GROUNDER_THREADS (default 1).
std::size_t thread_count();

// Runs body(i) for i in [0, n). Work items are distributed over
// thread_count() workers; callers keep results per item so that merging
// order, and therefore every reduction, is independent of the thread count.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body);

}  // namespace grounder
