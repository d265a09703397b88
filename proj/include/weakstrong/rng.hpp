#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <utility>
#include <vector>

#include "weakstrong/error.hpp"

namespace weakstrong {

// Counter-based generator (SplitMix64). The state transition is pure 64-bit
// integer arithmetic, so a given seed yields the same stream on every
// platform. An Rng is single-owner; parallel work derives independent
// streams via derive() instead of sharing one instance.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() {
    state_ += 0x9e3779b97f4a7c15ULL;
    return mix(state_);
  }

  // uniform in [0, 1)
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // uniform index in [0, n)
  std::size_t uniform_index(std::size_t n) {
    if (n == 0) throw ValueError("Rng::uniform_index: n must be positive");
    return static_cast<std::size_t>(next_u64() % n);
  }

  // Box-Muller transform over the counter stream; consumes exactly two
  // uniform draws per call so stream usage stays predictable.
  double normal(double mean, double std_dev) {
    if (std_dev < 0.0) throw ValueError("Rng::normal: std must be >= 0");
    const double u1 = static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53;  // (0, 1]
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    return mean + std_dev * r * std::cos(2.0 * std::numbers::pi * u2);
  }

  // Fisher-Yates; depends only on integer draws.
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::swap(v[i - 1], v[uniform_index(i)]);
    }
  }

  // Independent stream for a sub-task (fold, bag, row...). Deterministic in
  // (current state, tag) and runs the mixer once so derive(0) differs from
  // the parent stream.
  Rng derive(std::uint64_t tag) const {
    return Rng(mix((state_ ^ tag) + 0x9e3779b97f4a7c15ULL));
  }

  std::uint64_t state() const { return state_; }

 private:
  static std::uint64_t mix(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  std::uint64_t state_;
};

}  // namespace weakstrong
