#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace fruitnet {

/// Worker count for data-parallel loops. Defaults to the hardware
/// concurrency; FRUITNET_THREADS overrides it, set_thread_count wins over both.
/// A count of 1 gives the sequential, order-deterministic path.
inline std::atomic<int>& thread_count_override() {
  static std::atomic<int> value{0};
  return value;
}

inline int thread_count() {
  if (int forced = thread_count_override().load(); forced > 0) return forced;
  static const int from_env = [] {
    if (const char* env = std::getenv("FRUITNET_THREADS")) {
      const int n = std::atoi(env);
      if (n > 0) return n;
    }
    return std::max(1, static_cast<int>(std::thread::hardware_concurrency()));
  }();
  return from_env;
}

inline void set_thread_count(int n) { thread_count_override().store(std::max(0, n)); }

/// Runs fn(i) for i in [0, count). Iterations must write disjoint outputs, so
/// results do not depend on the worker count.
template <typename Fn>
void parallel_for(Eigen::Index count, Fn&& fn) {
  const int workers = static_cast<int>(std::min<Eigen::Index>(thread_count(), count));
  if (workers <= 1) {
    for (Eigen::Index i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<Eigen::Index> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto body = [&] {
    for (Eigen::Index i = next++; i < count; i = next++) {
      try {
        fn(i);
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  std::vector<std::jthread> pool;
  pool.reserve(static_cast<std::size_t>(workers - 1));
  for (int t = 1; t < workers; ++t) pool.emplace_back(body);
  body();
  pool.clear();
  if (failure) std::rethrow_exception(failure);
}

}  // namespace fruitnet
