#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace pmf {

// Deterministic random source. mt19937_64 output is fully specified by the
// standard and the derived draws below avoid the implementation-defined
// std::*_distribution classes, so streams are reproducible everywhere.
class Rng {
 public:
  explicit Rng(uint64_t seed) : gen_(seed) {}

  uint64_t next() { return gen_(); }

  // [0, 1)
  double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // [lo, hi] inclusive
  int uniform_int(int lo, int hi) {
    const uint64_t span = static_cast<uint64_t>(hi - lo) + 1;
    return lo + static_cast<int>(next() % span);
  }

  double normal() {
    double u1 = uniform();
    while (u1 == 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.28318530717958647692 * u2);
  }

  // Independent child stream.
  Rng fork(uint64_t stream) {
    uint64_t x = gen_() ^ (0x9E3779B97F4A7C15ull * (stream + 1));
    // splitmix64 finalizer
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    x = x ^ (x >> 31);
    return Rng(x);
  }

 private:
  std::mt19937_64 gen_;
};

}  // namespace pmf
