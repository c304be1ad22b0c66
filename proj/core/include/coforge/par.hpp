#pragma once

#include <cstddef>
#include <functional>

namespace coforge {

// Worker count: min(hardware_concurrency, COFORGE_THREADS if set). At least 1.
size_t worker_count();

// Runs fn(shard_index) for shard_index in [0, num_shards) across the worker
// pool. Shard boundaries are chosen by the caller and must not depend on the
// worker count; each shard writes only its own outputs, so results are
// identical for any COFORGE_THREADS. Exceptions from shards are rethrown.
void run_sharded(size_t num_shards, const std::function<void(size_t)>& fn);

}  // namespace coforge
