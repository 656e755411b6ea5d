#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace transkim {

// Seeded random source. One Rng is owned by one worker; the sequence of draws
// is a pure function of the seed.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  double uniform() { return std::uniform_real_distribution<double>(0.0, 1.0)(engine_); }
  double normal(double mean, double stddev) {
    return std::normal_distribution<double>(mean, stddev)(engine_);
  }
  // Integer in [lo, hi].
  int uniform_int(int lo, int hi) {
    return std::uniform_int_distribution<int>(lo, hi)(engine_);
  }
  // Standard Gumbel(0, 1) sample, -log(-log(u)) with u in (0, 1).
  double gumbel() {
    double u = 0.0;
    while (u <= 0.0) u = uniform();
    return -std::log(-std::log(u));
  }

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
};

}  // namespace transkim
