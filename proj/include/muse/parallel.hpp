#pragma once

#include <cstddef>
#include <functional>

namespace muse {

/// Worker cap: hardware concurrency, optionally lowered by MUSE_THREADS.
std::size_t worker_count();

/// Runs body(i) for i in [0, n). Each index must write only to its own
/// output slot; results are then independent of the schedule.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body);

}  // namespace muse
