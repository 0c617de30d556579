#pragma once

#include <cstddef>
#include <functional>

namespace bpode {

/// Worker cap: BPODE_THREADS if set and positive, else hardware concurrency.
std::size_t worker_count();

/// Runs body(i) for i in [0, n) over worker_count() threads. Bodies must write
/// to disjoint outputs; the first exception thrown is rethrown after join.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body);

}  // namespace bpode
