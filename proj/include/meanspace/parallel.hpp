#pragma once

// Voxel-parallel loops and reductions. Reductions split the index range into
// fixed-size chunks and combine chunk partials with a pairwise tree, so the
// result does not depend on how many workers run the loop.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdlib>
#include <span>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace meanspace {

inline constexpr std::ptrdiff_t kReduceChunk = 4096;

// Applies the worker count from MEANSPACE_THREADS, if set.
inline void configure_workers_from_env() {
#ifdef _OPENMP
  if (const char* env = std::getenv("MEANSPACE_THREADS")) {
    const int n = std::atoi(env);
    if (n > 0) omp_set_num_threads(n);
  }
#endif
}

inline void set_workers(int n) {
#ifdef _OPENMP
  if (n > 0) omp_set_num_threads(n);
#else
  (void)n;
#endif
}

inline int worker_count() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

template <class F>
void parallel_for(std::ptrdiff_t n, F&& body) {
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
  for (std::ptrdiff_t i = 0; i < n; ++i) body(i);
}

inline double pairwise_sum(std::span<double> values) {
  if (values.empty()) return 0.0;
  std::size_t n = values.size();
  while (n > 1) {
    const std::size_t half = n / 2;
    for (std::size_t i = 0; i < half; ++i) values[i] = values[2 * i] + values[2 * i + 1];
    if (n % 2) {
      values[half] = values[n - 1];
      n = half + 1;
    } else {
      n = half;
    }
  }
  return values[0];
}

// Deterministic sum of term(i) for i in [0, n).
template <class F>
double reduce_sum(std::ptrdiff_t n, F&& term) {
  if (n <= 0) return 0.0;
  const std::ptrdiff_t chunks = (n + kReduceChunk - 1) / kReduceChunk;
  std::vector<double> partial(static_cast<std::size_t>(chunks), 0.0);
  parallel_for(chunks, [&](std::ptrdiff_t c) {
    const std::ptrdiff_t lo = c * kReduceChunk;
    const std::ptrdiff_t hi = std::min(n, lo + kReduceChunk);
    double s = 0.0;
    for (std::ptrdiff_t i = lo; i < hi; ++i) s += term(i);
    partial[static_cast<std::size_t>(c)] = s;
  });
  return pairwise_sum(partial);
}

namespace detail {

// Branch-free three-element sorting network.
inline void sort3(double a, double b, double c, double& lo, double& mid, double& hi) {
  const double a1 = std::min(a, b), b1 = std::max(a, b);
  const double b2 = std::min(b1, c);
  hi = std::max(b1, c);
  lo = std::min(a1, b2);
  mid = std::max(a1, b2);
}

}  // namespace detail

// Sum that depends only on the multiset of values, not their order. Used
// wherever per-image quantities are combined so the group algorithm stays
// bitwise symmetric under permutation of its inputs.
inline double symmetric_sum(std::span<double> values) {
  switch (values.size()) {
    case 0: return 0.0;
    case 1: return 0.0 + values[0];
    case 2: return values[0] + values[1];
    case 3: {
      double lo, mid, hi;
      detail::sort3(values[0], values[1], values[2], lo, mid, hi);
      return (lo + mid) + hi;
    }
    default: break;
  }
  std::sort(values.begin(), values.end());
  double s = 0.0;
  for (double v : values) s += v;
  return s;
}

// Order-independent compensated (Neumaier) sum; sorts `values` in place.
inline double symmetric_sum_compensated(std::span<double> values) {
  if (values.size() == 2) {
    // Two-sum: s + err equals a + b exactly.
    const double a = values[0], b = values[1];
    const double s = a + b;
    const double bb = s - a;
    return s + ((a - (s - bb)) + (b - bb));
  }
  if (values.size() == 3) {
    double lo, mid, hi;
    detail::sort3(values[0], values[1], values[2], lo, mid, hi);
    values[0] = lo;
    values[1] = mid;
    values[2] = hi;
  } else {
    std::sort(values.begin(), values.end());
  }
  double s = 0.0, c = 0.0;
  for (double v : values) {
    const double t = s + v;
    c += std::abs(s) >= std::abs(v) ? (s - t) + v : (v - t) + s;
    s = t;
  }
  return s + c;
}

}  // namespace meanspace
