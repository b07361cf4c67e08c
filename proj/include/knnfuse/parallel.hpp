#pragma once

#include <cstddef>
#include <functional>

namespace knnfuse {

/// Worker count: explicit value if > 0, else KNNFUSE_THREADS, else hardware concurrency.
std::size_t resolve_threads(std::size_t requested = 0);

/// Runs body(i) for i in [0, count) over `threads` workers. Tasks are claimed
/// dynamically; callers must write results into per-task slots so the output
/// never depends on scheduling. The first exception thrown is rethrown.
void parallel_for(std::size_t count, std::size_t threads,
                  const std::function<void(std::size_t)>& body);

}  // namespace knnfuse
