#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdio>
#include <functional>
#include <span>
#include <string>
#include <thread>
#include <vector>

namespace mgdl::detail {

inline double relu(double t) noexcept { return t > 0.0 ? t : 0.0; }

/// Pairwise (cascade) summation; the split points depend only on the length,
/// so results are reproducible bit for bit.
inline double pairwise_sum(std::span<const double> v) {
  constexpr std::size_t kLeaf = 64;
  if (v.size() <= kLeaf) {
    double s = 0.0;
    for (double x : v) s += x;
    return s;
  }
  const std::size_t half = v.size() / 2;
  return pairwise_sum(v.first(half)) + pairwise_sum(v.subspan(half));
}

/// Shortest form guaranteed to round-trip a binary64 value.
inline std::string format_double(double x) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", x);
  return buf;
}

/// Static block partition over [0, n). Each index is visited exactly once, so
/// callers that only write per-index results stay deterministic for any
/// thread count.
inline void parallel_for(std::size_t n, unsigned threads,
                         const std::function<void(std::size_t, std::size_t)>& body) {
  threads = std::max(1u, threads);
  if (threads == 1 || n < 4096) {
    body(0, n);
    return;
  }
  std::vector<std::thread> pool;
  const std::size_t chunk = (n + threads - 1) / threads;
  for (unsigned t = 0; t < threads; ++t) {
    const std::size_t lo = t * chunk;
    const std::size_t hi = std::min(n, lo + chunk);
    if (lo >= hi) break;
    pool.emplace_back(body, lo, hi);
  }
  for (auto& th : pool) th.join();
}

}  // namespace mgdl::detail
