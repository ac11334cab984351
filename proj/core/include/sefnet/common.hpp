#pragma once

#include <cmath>
#include <complex>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <thread>
#include <type_traits>
#include <vector>

namespace sefnet {

template <class T>
concept RealScalar = std::is_same_v<T, float> || std::is_same_v<T, double>;

template <RealScalar Real>
constexpr Real pi_v = static_cast<Real>(3.14159265358979323846L);

/// Seeded RNG used everywhere reproducibility matters.
using Rng = std::mt19937_64;

inline bool is_finite(double v) { return std::isfinite(v); }
inline bool is_finite(float v) { return std::isfinite(v); }
template <class Real>
inline bool is_finite(const std::complex<Real>& v) {
  return std::isfinite(v.real()) && std::isfinite(v.imag());
}

struct ShapeError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Deterministic worker pool: [0, n) is split into contiguous blocks, one per
/// worker, so any per-index output slots are filled independently of thread
/// timing. Aggregate results sequentially after the call.
template <class Fn>
void parallel_for(std::int64_t n, int threads, Fn&& fn) {
  if (threads <= 1 || n < 2) {
    for (std::int64_t i = 0; i < n; ++i) fn(i);
    return;
  }
  const int t = static_cast<int>(std::min<std::int64_t>(threads, n));
  std::vector<std::thread> pool;
  pool.reserve(t);
  const std::int64_t chunk = (n + t - 1) / t;
  for (int w = 0; w < t; ++w) {
    const std::int64_t lo = w * chunk;
    const std::int64_t hi = std::min<std::int64_t>(n, lo + chunk);
    if (lo >= hi) break;
    pool.emplace_back([lo, hi, &fn] {
      for (std::int64_t i = lo; i < hi; ++i) fn(i);
    });
  }
  for (auto& th : pool) th.join();
}

inline int hardware_threads() {
  unsigned n = std::thread::hardware_concurrency();
  return n == 0 ? 1 : static_cast<int>(n);
}

}  // namespace sefnet
