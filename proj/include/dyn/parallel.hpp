#pragma once

#include <functional>

namespace dyn {

// min(hardware_concurrency, DYND_THREADS); at least 1.
int thread_count();

// Runs body(begin, end) over contiguous bands of [begin, end). Every index is
// handled by exactly one band, so output is independent of the band count.
void parallel_for(long begin, long end, const std::function<void(long, long)>& body);

}  // namespace dyn
