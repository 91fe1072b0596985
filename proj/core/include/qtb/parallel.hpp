#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>

namespace qtb {

/// Worker count: QTB_THREADS if set and positive, else hardware concurrency.
int thread_count();

/// Runs fn(i) for i in [0, n). Tasks must write to disjoint outputs. If any
/// task throws, the exception from the lowest index is rethrown.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

/// splitmix64 finalizer applied to (root, stream); stable across platforms.
std::uint64_t derive_seed(std::uint64_t root, std::uint64_t stream);

}  // namespace qtb
