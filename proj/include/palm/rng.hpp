#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <vector>

namespace palm {

namespace detail {

inline uint64_t mix64(uint64_t z) {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

}  // namespace detail

// Counter-based generator: every draw is a pure function of (seed, counter),
// so the same state yields the same sequence on any platform and streams can
// be derived per (epoch, sample, ...) without sharing mutable state.
struct RngState {
  uint64_t seed = 0;
  uint64_t counter = 0;

  RngState() = default;
  explicit RngState(uint64_t s) : seed(s) {}

  uint64_t next_u64() {
    ++counter;
    return detail::mix64(seed + counter * 0x9E3779B97F4A7C15ull);
  }

  // [0,1)
  double next_uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double a, double b) { return a + (b - a) * next_uniform(); }

  // [0,n); modulo bias is negligible at the ranges used here
  int next_int(int n) { return static_cast<int>(next_u64() % static_cast<uint64_t>(n)); }

  double next_gaussian() {
    double u1 = 1.0 - next_uniform();  // (0,1], keeps log() finite
    double u2 = next_uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
  }

  std::vector<int> permutation(int n) {
    std::vector<int> p(n);
    for (int i = 0; i < n; ++i) p[i] = i;
    for (int i = n - 1; i > 0; --i) {
      int j = next_int(i + 1);
      std::swap(p[i], p[j]);
    }
    return p;
  }

  // Hash-chains a path of indices into an independent stream.
  static RngState derive(uint64_t root, std::initializer_list<uint64_t> path) {
    uint64_t s = detail::mix64(root ^ 0x6A09E667F3BCC909ull);
    for (uint64_t p : path) s = detail::mix64(s ^ (p + 0x9E3779B97F4A7C15ull));
    return RngState(s);
  }
};

}  // namespace palm
