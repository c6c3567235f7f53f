#pragma once

#include <cstddef>
#include <functional>

namespace normlab {

/// Calls fn(i) for i in [0, n) on up to `threads` worker threads (0 = one per
/// hardware thread). Work items must not share mutable state. The first
/// exception thrown by any item is rethrown after all workers finish.
void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& fn);

}  // namespace normlab
