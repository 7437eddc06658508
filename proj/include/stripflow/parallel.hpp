#pragma once

#include <cstdint>
#include <functional>

namespace stripflow {

// Number of worker threads used by parallel_for. Defaults to the hardware
// concurrency, capped by the STRIPFLOW_THREADS environment variable.
int thread_count();

// Runs fn over [0, n) split into fixed contiguous chunks, one per thread.
// Every output cell is written by exactly one chunk and the per-chunk
// iteration order is fixed, so results are identical for any thread count.
void parallel_for(int64_t n, const std::function<void(int64_t, int64_t)>& fn);

}  // namespace stripflow
