#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

namespace weightscape {

namespace detail {

inline std::atomic<std::size_t>& thread_override() {
  static std::atomic<std::size_t> value{0};
  return value;
}

inline bool& inside_parallel_region() {
  thread_local bool inside = false;
  return inside;
}

}  // namespace detail

/// Worker count for internal parallelism. Resolution order: explicit
/// set_thread_count(), then WEIGHTSCAPE_THREADS, then hardware concurrency.
inline std::size_t thread_count() {
  if (std::size_t forced = detail::thread_override().load(); forced > 0) {
    return forced;
  }
  if (const char* env = std::getenv("WEIGHTSCAPE_THREADS")) {
    char* end = nullptr;
    unsigned long parsed = std::strtoul(env, &end, 10);
    if (end != env && parsed > 0) return static_cast<std::size_t>(parsed);
  }
  return std::max<std::size_t>(1, std::thread::hardware_concurrency());
}

/// 0 restores the environment/hardware default.
inline void set_thread_count(std::size_t n) {
  detail::thread_override().store(n);
}

/// Runs fn(i) for every i in [0, n). Each index is handled by exactly one
/// worker, so results never depend on the worker count as long as fn(i)
/// writes only to slots owned by i. Nested calls run serially.
template <typename Fn>
void parallel_for(std::size_t n, Fn&& fn) {
  std::size_t workers = std::min(thread_count(), n);
  if (workers <= 1 || detail::inside_parallel_region()) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }

  std::exception_ptr failure;
  std::mutex failure_mutex;
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    detail::inside_parallel_region() = true;
    try {
      for (std::size_t i = next.fetch_add(1); i < n; i = next.fetch_add(1)) {
        fn(i);
      }
    } catch (...) {
      std::lock_guard lock(failure_mutex);
      if (!failure) failure = std::current_exception();
      next.store(n);
    }
    detail::inside_parallel_region() = false;
  };

  {
    std::vector<std::jthread> pool;
    pool.reserve(workers - 1);
    for (std::size_t t = 1; t < workers; ++t) pool.emplace_back(work);
    work();
  }
  if (failure) std::rethrow_exception(failure);
}

}  // namespace weightscape
