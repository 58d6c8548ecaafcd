#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

namespace dm {

/// Number of workers used by internally parallel kernels. Reads DM_WORKERS,
/// falling back to the hardware concurrency.
inline std::size_t worker_count() {
  if (const char* env = std::getenv("DM_WORKERS")) {
    try {
      long n = std::stol(env);
      if (n >= 1) return static_cast<std::size_t>(n);
    } catch (...) {
    }
  }
  return std::max<std::size_t>(1, std::thread::hardware_concurrency());
}

/// Runs fn(begin, end) over fixed-size chunks of [0, n). Chunk boundaries do
/// not depend on the worker count, so any per-chunk computation yields the
/// same result however many workers run.
template <typename Fn>
void parallel_chunks(std::size_t n, std::size_t chunk, Fn&& fn, std::size_t workers = worker_count()) {
  if (n == 0) return;
  chunk = std::max<std::size_t>(1, chunk);
  const std::size_t num_chunks = (n + chunk - 1) / chunk;
  workers = std::clamp<std::size_t>(workers, 1, num_chunks);
  if (workers == 1) {
    for (std::size_t c = 0; c < num_chunks; ++c) fn(c * chunk, std::min(n, (c + 1) * chunk));
    return;
  }

  std::exception_ptr first_error;
  std::mutex error_mutex;
  std::vector<std::jthread> pool;
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      for (std::size_t c = w; c < num_chunks; c += workers) {
        try {
          fn(c * chunk, std::min(n, (c + 1) * chunk));
        } catch (...) {
          std::lock_guard lock(error_mutex);
          if (!first_error) first_error = std::current_exception();
          return;
        }
      }
    });
  }
  pool.clear();
  if (first_error) std::rethrow_exception(first_error);
}

}  // namespace dm
