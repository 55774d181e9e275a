#pragma once

#include <cstddef>
#include <functional>

namespace covshift {

// COVSHIFT_THREADS when set to a positive integer, otherwise the hardware
// concurrency.
int default_thread_count();

// Runs body(0..count-1) on up to `threads` workers. Exceptions are collected
// per index and the one with the lowest index is rethrown after all work
// finishes, so the outcome does not depend on scheduling.
void parallel_for(std::size_t count, int threads, const std::function<void(std::size_t)>& body);

}  // namespace covshift
