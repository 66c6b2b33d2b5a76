#pragma once

#include <cstddef>
#include <functional>

namespace projnet {

/// Worker cap for kernel parallelism, read once from PROJNET_THREADS
/// (default: hardware concurrency). It bounds both the OpenBLAS pool and
/// parallel_for. Per-channel and elementwise kernels keep a fixed reduction
/// order per output, so their results do not depend on this value.
std::size_t thread_count();
void set_thread_count(std::size_t n);

/// Runs fn(begin, end) over [0, n) in contiguous chunks.
void parallel_for(std::size_t n, const std::function<void(std::size_t, std::size_t)>& fn);

}  // namespace projnet
