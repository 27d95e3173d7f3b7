#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdlib>
#include <thread>
#include <vector>

namespace proptrain {

inline unsigned worker_count() {
  if (const char* s = std::getenv("PROPTRAIN_THREADS")) {
    int n = std::atoi(s);
    if (n > 0) return unsigned(n);
  }
  unsigned n = std::thread::hardware_concurrency();
  return n ? n : 1;
}

// Splits [0, n) into contiguous blocks, one worker per block.  Work on
// distinct indices must be independent; callers may not depend on scheduling
// order, so results stay identical for any thread count.
template <class F>
void parallel_blocks(std::size_t n, F&& body) {
  std::size_t workers = std::min<std::size_t>(worker_count(), n);
  if (workers <= 1) {
    if (n) body(std::size_t(0), n, std::size_t(0));
    return;
  }
  std::size_t chunk = (n + workers - 1) / workers;
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (std::size_t t = 0; t < workers; ++t) {
    std::size_t b = t * chunk;
    std::size_t e = std::min(n, b + chunk);
    if (b >= e) break;
    pool.emplace_back([&body, b, e, t] { body(b, e, t); });
  }
  for (auto& th : pool) th.join();
}

template <class F>
void parallel_for(std::size_t n, F&& body) {
  parallel_blocks(n, [&body](std::size_t b, std::size_t e, std::size_t) {
    for (std::size_t i = b; i < e; ++i) body(i);
  });
}

}  // namespace proptrain
