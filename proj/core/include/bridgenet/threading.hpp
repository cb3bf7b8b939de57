#pragma once
// Deterministic work sharding. Ranges are split statically by index, so
// results never depend on the worker count. BRIDGENET_THREADS caps workers;
// with one worker everything runs inline on the calling thread.

#include <cstdint>
#include <functional>

namespace bridgenet {

// Worker count: min(hardware_concurrency, BRIDGENET_THREADS if set). At least 1.
int worker_count();

// Invokes fn(begin, end) for disjoint static chunks covering [0, n).
void parallel_for(int64_t n, const std::function<void(int64_t, int64_t)>& fn);

}  // namespace bridgenet
