#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

namespace glco {

// Worker cap: GLCO_THREADS if set, else hardware concurrency.
inline std::size_t thread_limit() {
  static const std::size_t limit = [] {
    if (const char* env = std::getenv("GLCO_THREADS")) {
      try {
        const long v = std::stol(env);
        if (v >= 1) return std::size_t(v);
      } catch (...) {
      }
      return std::size_t{1};
    }
    return std::max<std::size_t>(1, std::thread::hardware_concurrency());
  }();
  return limit;
}

/// Runs fn(i) for i in [0, n). Each index is processed by exactly one worker,
/// so callers that write disjoint outputs per index stay bit-deterministic.
/// The first exception thrown by any worker is rethrown after all join.
template <class Fn>
void parallel_for(std::size_t n, Fn&& fn, std::size_t min_per_worker = 1) {
  const std::size_t workers =
      std::min(thread_limit(), std::max<std::size_t>(1, n / std::max<std::size_t>(1, min_per_worker)));
  if (workers <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(workers);
  std::exception_ptr error;
  std::mutex error_mutex;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = w; i < n; i += workers) fn(i);
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (!error) error = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

}  // namespace glco
