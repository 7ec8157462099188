#pragma once

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace volnet {

/// Worker cap from VOLNET_THREADS. Unset -> hardware concurrency; 0 -> 1
/// (single-worker deterministic mode).
inline int worker_count_from_env() {
  const char* v = std::getenv("VOLNET_THREADS");
  if (v == nullptr || *v == '\0') {
    return std::max(1u, std::thread::hardware_concurrency());
  }
  return std::max(1, std::atoi(v));
}

/// Calls fn(i) for i in [0, n) on up to `workers` threads. Work items must
/// write disjoint outputs; the first exception thrown is rethrown.
template <typename Fn>
void parallel_for(int n, int workers, Fn&& fn) {
  workers = std::clamp(workers, 1, std::max(1, n));
  if (workers == 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  auto body = [&] {
    for (int i = next++; i < n; i = next++) {
      try {
        fn(i);
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (!error) error = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  for (int w = 1; w < workers; ++w) pool.emplace_back(body);
  body();
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

}  // namespace volnet
