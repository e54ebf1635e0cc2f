#include "xrisk/common.hpp"

#include <algorithm>
#include <cstdlib>
#include <thread>

namespace xrisk {

int worker_count() {
  static const int cached = [] {
    const char* env = std::getenv("XRISK_THREADS");
    if (!env) return 1;
    const int n = std::atoi(env);
    return std::clamp(n, 1, 64);
  }();
  return cached;
}

void parallel_for(int n, const std::function<void(int)>& fn) {
  const int workers = std::min(worker_count(), n);
  if (workers <= 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(workers));
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      for (int i = w; i < n; i += workers) fn(i);
    });
  }
  for (auto& t : pool) t.join();
}

}  // namespace xrisk
