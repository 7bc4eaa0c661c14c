#include "dyn/parallel.hpp"

#include <algorithm>
#include <cstdlib>
#include <thread>
#include <vector>

namespace dyn {

int thread_count() {
  static int cached = [] {
    int n = int(std::thread::hardware_concurrency());
    if (n < 1) n = 1;
    if (const char* env = std::getenv("DYND_THREADS")) {
      int cap = std::atoi(env);
      if (cap >= 1) n = std::min(n, cap);
    }
    return n;
  }();
  return cached;
}

void parallel_for(long begin, long end, const std::function<void(long, long)>& body) {
  long n = end - begin;
  if (n <= 0) return;
  int workers = std::min<long>(thread_count(), n);
  if (workers <= 1) {
    body(begin, end);
    return;
  }
  long chunk = (n + workers - 1) / workers;
  std::vector<std::thread> pool;
  pool.reserve(size_t(workers));
  for (int w = 0; w < workers; ++w) {
    long lo = begin + w * chunk;
    long hi = std::min(end, lo + chunk);
    if (lo >= hi) break;
    pool.emplace_back([&body, lo, hi] { body(lo, hi); });
  }
  for (auto& t : pool) t.join();
}

}  // namespace dyn
