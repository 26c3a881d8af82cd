#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

namespace shape {

// Deterministic random streams. All distributions are hand-rolled on top of
// splitmix64/xoshiro so that seeded results are bit-identical across
// standard-library implementations.

inline uint64_t splitmix64(uint64_t& state) {
  uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

class Rng {
 public:
  explicit Rng(uint64_t seed = 0) { reseed(seed); }

  void reseed(uint64_t seed) {
    uint64_t sm = seed;
    for (auto& w : s_) w = splitmix64(sm);
    cached_ = false;
  }

  // xoshiro256**
  uint64_t next_u64() {
    const uint64_t result = rotl(s_[1] * 5, 7) * 9;
    const uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
  }

  // uniform in [0, 1)
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // index in [0, n)
  uint64_t index(uint64_t n) { return next_u64() % n; }

  // standard normal via Marsaglia polar method
  double normal() {
    if (cached_) {
      cached_ = false;
      return cache_;
    }
    double u, v, s;
    do {
      u = 2.0 * uniform() - 1.0;
      v = 2.0 * uniform() - 1.0;
      s = u * u + v * v;
    } while (s >= 1.0 || s == 0.0);
    const double m = std::sqrt(-2.0 * std::log(s) / s);
    cache_ = v * m;
    cached_ = true;
    return u * m;
  }

  std::vector<double> normal_vector(int n) {
    std::vector<double> out(static_cast<size_t>(n));
    for (auto& x : out) x = normal();
    return out;
  }

  // uniform direction on the unit sphere in R^n
  std::vector<double> unit_vector(int n) {
    std::vector<double> u;
    double norm = 0.0;
    do {
      u = normal_vector(n);
      norm = 0.0;
      for (double x : u) norm += x * x;
      norm = std::sqrt(norm);
    } while (norm < 1e-12);
    for (auto& x : u) x /= norm;
    return u;
  }

  // +1/-1 with equal probability
  double rademacher() { return (next_u64() & 1ULL) ? 1.0 : -1.0; }

 private:
  static uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

  uint64_t s_[4] = {};
  bool cached_ = false;
  double cache_ = 0.0;
};

// Derives an independent stream for a labelled sub-component of a run.
inline uint64_t derive_seed(uint64_t base, uint64_t stream) {
  uint64_t s = base ^ (0x51c9deadbeef7e11ULL + stream * 0x9e3779b97f4a7c15ULL);
  splitmix64(s);
  return splitmix64(s);
}

// Counter-based noise source: the draw for a given call index is independent
// of how many draws preceded it, so paired runs see identical noise at equal
// call indices even when their query patterns differ.
class NoiseStream {
 public:
  explicit NoiseStream(uint64_t seed = 0) : seed_(seed) {}

  Rng at_call(uint64_t call_index) const { return Rng(derive_seed(seed_, call_index)); }

  uint64_t seed() const { return seed_; }

 private:
  uint64_t seed_;
};

}  // namespace shape
