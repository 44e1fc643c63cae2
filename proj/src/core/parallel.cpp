// Copyright (c) 2026 The Bonnet Authors
// SPDX-License-Identifier: Apache-2.0

#include "bonnet/parallel.hpp"

#include <algorithm>
#include <exception>
#include <thread>
#include <vector>

namespace bonnet {

int hardware_threads() {
  return std::max(1u, std::thread::hardware_concurrency());
}

void parallel_for(std::int64_t begin, std::int64_t end, int threads,
                  const std::function<void(std::int64_t, std::int64_t)>& body) {
  const std::int64_t total = end - begin;
  if (total <= 0) {
    return;
  }
  const std::int64_t chunks = std::clamp<std::int64_t>(threads, 1, total);
  if (chunks == 1) {
    body(begin, end);
    return;
  }
  const std::int64_t step = (total + chunks - 1) / chunks;
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(chunks));
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(chunks - 1));
  for (std::int64_t i = 1; i < chunks; ++i) {
    const std::int64_t lo = begin + i * step;
    const std::int64_t hi = std::min(end, lo + step);
    if (lo >= hi) {
      break;
    }
    pool.emplace_back([&, i, lo, hi] {
      try {
        body(lo, hi);
      } catch (...) {
        errors[static_cast<std::size_t>(i)] = std::current_exception();
      }
    });
  }
  try {
    body(begin, std::min(end, begin + step));
  } catch (...) {
    errors[0] = std::current_exception();
  }
  for (auto& t : pool) {
    t.join();
  }
  for (auto& e : errors) {
    if (e) {
      std::rethrow_exception(e);
    }
  }
}

}  // namespace bonnet
