#pragma once

#include <cstddef>
#include <functional>

namespace matter {

// Worker count used by parallel_for. Defaults to MATTER_THREADS when set,
// otherwise 1. Results never depend on this value: work is always split into
// the same index ranges and reduced in index order by the callers.
int thread_count();
void set_thread_count(int n);

// Runs fn(i) for i in [0, n). The first exception thrown by a worker is
// rethrown on the calling thread after all workers finish.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

// Keeps freed activation buffers in the process heap instead of returning
// them to the kernel after every batch. Called by the training and dense
// inference loops; safe to call repeatedly. No effect outside glibc.
void retain_heap_memory();

}  // namespace matter
