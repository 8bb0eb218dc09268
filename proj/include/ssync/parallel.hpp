#pragma once

#include <functional>

namespace ssync {

/// Worker count for data-parallel loops: SSYNC_THREADS if set (clamped to
/// [1, 64]), otherwise hardware concurrency capped at 8.
int worker_count();

/// Runs fn(i) for i in [0, n). Iterations must write disjoint state; the
/// result is then identical for any worker count.
void parallel_for(int n, const std::function<void(int)>& fn);

} // namespace ssync
