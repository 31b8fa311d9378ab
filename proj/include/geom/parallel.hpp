#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace geom {

// Fixed-size fan-out helper. Owned by the caller (the CLI sizes it); library
// code receives it by reference and never spawns threads of its own. Tasks
// write their results into per-index slots, so output order never depends on
// scheduling.
class WorkerPool {
 public:
  explicit WorkerPool(std::size_t threads = 1) : threads_(std::max<std::size_t>(threads, 1)) {}

  std::size_t size() const { return threads_; }

  static std::size_t hardware() {
    return std::max<std::size_t>(std::thread::hardware_concurrency(), 1);
  }

  // Calls fn(i) for i in [0, n). The first exception (by task index) is
  // rethrown after every worker has stopped.
  template <class Fn>
  void for_each(std::size_t n, Fn&& fn) const {
    if (n == 0) return;
    std::vector<std::exception_ptr> errors(n);
    const auto run = [&](std::size_t i) {
      try {
        fn(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    };
    const std::size_t workers = std::min(threads_, n);
    if (workers == 1) {
      for (std::size_t i = 0; i < n; ++i) run(i);
    } else {
      std::atomic<std::size_t> next{0};
      std::vector<std::jthread> pool;
      pool.reserve(workers);
      for (std::size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&] {
          for (std::size_t i = next++; i < n; i = next++) run(i);
        });
      }
    }
    for (auto& e : errors) {
      if (e) std::rethrow_exception(e);
    }
  }

 private:
  std::size_t threads_;
};

}  // namespace geom
