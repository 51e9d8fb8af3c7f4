#pragma once

#include <cstddef>
#include <functional>

namespace csou {

// Worker cap: CSOU_THREADS if set to a positive integer, else the hardware
// concurrency (at least 1).
std::size_t worker_count();

// Runs fn(i) for i in [0, n) over up to worker_count() threads. Each index is
// visited exactly once; callers write results into per-index slots so the
// outcome does not depend on scheduling. The first exception is rethrown.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace csou
