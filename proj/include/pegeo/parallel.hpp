#pragma once

#include <cstddef>
#include <functional>

namespace pegeo {

// Worker count resolution: PEGEO_THREADS env var, 0 or unset = hardware concurrency.
int worker_count();

// Runs fn(i) for i in [0, n) across workers. Each index writes only its own output
// slots, so results are independent of scheduling and worker count.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

// Runs fn(begin, end) over fixed-size chunks of [0, n). Chunk boundaries depend only on
// chunk_size, never on the worker count, so ordered reductions over chunk results are
// bit-identical for any number of workers.
void parallel_chunks(std::size_t n, std::size_t chunk_size,
                     const std::function<void(std::size_t, std::size_t)>& fn);

}  // namespace pegeo
