#pragma once

#include <cstddef>
#include <thread>
#include <vector>

namespace basis::parallel {

/// Process-wide worker count. 0 means "use hardware concurrency".
inline int& thread_count_setting() {
  static int count = 0;
  return count;
}

inline void set_thread_count(int n) { thread_count_setting() = n < 0 ? 0 : n; }

inline int effective_thread_count() {
  const int setting = thread_count_setting();
  if (setting > 0) return setting;
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}

/// Runs f(i) for every i in [0, n), possibly on several threads.
///
/// f(i) must touch only state owned by index i (typically slot i of a
/// preallocated results vector); callers then reduce the slots in index
/// order. Output is therefore identical for every thread count.
template <class F>
void for_each_index(std::size_t n, F&& f) {
  const int threads = effective_thread_count();
  if (threads <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) f(i);
    return;
  }
  const std::size_t workers =
      std::min<std::size_t>(static_cast<std::size_t>(threads), n);
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      for (std::size_t i = w; i < n; i += workers) f(i);
    });
  }
  for (auto& t : pool) t.join();
}

}  // namespace basis::parallel
