#pragma once

#include <functional>

namespace pinnsim {

/// Worker count: PINNSIM_THREADS if set to a positive integer, otherwise the
/// hardware concurrency (at least 1).
int worker_count();

/// Runs task(i) for i in [0, count) on up to worker_count() threads. Tasks
/// must write to disjoint outputs; callers reduce results in index order so
/// the outcome does not depend on the thread count. The first exception
/// thrown by a task is rethrown after all workers finish.
void parallel_for(int count, const std::function<void(int)>& task);

}  // namespace pinnsim
