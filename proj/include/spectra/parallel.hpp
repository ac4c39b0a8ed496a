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

#include "spectra/errors.hpp"

namespace spectra {

/// Worker count: explicit request, else SPECTRA_WORKERS, else hardware.
inline std::size_t resolve_workers(std::size_t requested = 0) {
  if (requested > 0) return requested;
  if (const char* env = std::getenv("SPECTRA_WORKERS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end == env || *end != '\0' || v <= 0) throw ConfigError("SPECTRA_WORKERS", "must be a positive integer");
    return static_cast<std::size_t>(v);
  }
  return std::max<std::size_t>(1, std::thread::hardware_concurrency());
}

/// Evaluates fn(i) for i in [begin, end) on `workers` threads and returns the
/// results in index order. Workers pull indices from a shared counter, so the
/// schedule varies but the output does not. On failure the remaining work
/// is abandoned and the exception from the lowest failing index is rethrown.
template <class Fn>
auto parallel_map(std::size_t begin, std::size_t end, std::size_t workers, Fn&& fn)
    -> std::vector<decltype(fn(begin))> {
  using T = decltype(fn(begin));
  const std::size_t n = end > begin ? end - begin : 0;
  std::vector<T> out(n);
  if (n == 0) return out;
  workers = std::min(std::max<std::size_t>(workers, 1), n);
  std::atomic<std::size_t> next{0};
  std::atomic<bool> stop{false};
  std::mutex err_mu;
  std::size_t err_index = n;
  std::exception_ptr err;
  auto body = [&] {
    for (;;) {
      if (stop.load(std::memory_order_relaxed)) return;
      const std::size_t k = next.fetch_add(1);
      if (k >= n) return;
      try {
        out[k] = fn(begin + k);
      } catch (...) {
        std::lock_guard lock(err_mu);
        if (k < err_index) {
          err_index = k;
          err = std::current_exception();
        }
        stop.store(true);
      }
    }
  };
  if (workers == 1) {
    body();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(body);
    for (auto& t : pool) t.join();
  }
  if (err) std::rethrow_exception(err);
  return out;
}

}  // namespace spectra
