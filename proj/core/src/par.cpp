#include "coforge/par.hpp"

#include <atomic>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace coforge {

size_t worker_count() {
  size_t n = std::thread::hardware_concurrency();
  if (n == 0) n = 1;
  if (const char* env = std::getenv("COFORGE_THREADS")) {
    char* end = nullptr;
    long cap = std::strtol(env, &end, 10);
    if (end != env && cap >= 1 && static_cast<size_t>(cap) < n) {
      n = static_cast<size_t>(cap);
    }
  }
  return n;
}

void run_sharded(size_t num_shards, const std::function<void(size_t)>& fn) {
  if (num_shards == 0) return;
  size_t workers = worker_count();
  if (workers > num_shards) workers = num_shards;

  if (workers <= 1) {
    for (size_t i = 0; i < num_shards; ++i) fn(i);
    return;
  }

  std::atomic<size_t> next{0};
  std::atomic<bool> failed{false};
  std::exception_ptr first_error;
  std::mutex err_mutex;

  auto body = [&]() {
    for (;;) {
      size_t i = next.fetch_add(1);
      if (i >= num_shards || failed.load()) return;
      try {
        fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(err_mutex);
        if (!first_error) first_error = std::current_exception();
        failed.store(true);
        return;
      }
    }
  };

  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (size_t w = 0; w < workers; ++w) pool.emplace_back(body);
  for (auto& t : pool) t.join();
  if (first_error) std::rethrow_exception(first_error);
}

}  // namespace coforge
