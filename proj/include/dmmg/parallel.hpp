#pragma once

#include <cstdint>
#include <functional>

namespace dmmg {

/// Worker-thread cap: DMMG_THREADS when set to a positive integer, otherwise
/// the hardware concurrency (at least 1).
int worker_threads();

/// Runs body(i) for i in [0, n), split across worker_threads() threads.
/// Falls back to a plain loop when one thread suffices. The body must not
/// touch shared mutable state; exceptions from workers are rethrown.
void parallel_for(std::int64_t n, const std::function<void(std::int64_t)>& body);

}  // namespace dmmg
