#pragma once
// Seedable, portable 64-bit RNG. The generator is splitmix64 (Steele, Lea &
// Flood: state advances by the golden-ratio gamma, output is a bit-mixed hash
// of the state), which produces the same sequence on every platform for a
// given seed. All randomized stages of the pipeline draw from this generator
// so that runs are bit-reproducible.

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

namespace rxpipe {

inline uint64_t splitmix64_next(uint64_t& state) {
  uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Derives an independent stream seed from (seed, label). Used for per-job,
// per-tree and per-fold streams so results never depend on scheduling order.
inline uint64_t mix_seed(uint64_t seed, uint64_t label) {
  uint64_t s = seed ^ (0x9e3779b97f4a7c15ULL * (label + 1));
  return splitmix64_next(s);
}

class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(seed) {}

  uint64_t next_u64() { return splitmix64_next(state_); }

  // Unbiased integer in [0, n) via rejection sampling.
  uint64_t below(uint64_t n) {
    if (n == 0) throw std::invalid_argument("Rng::below: n must be positive");
    uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    uint64_t x;
    do {
      x = next_u64();
    } while (x >= limit);
    return x % n;
  }

  // Inclusive integer range.
  int64_t range(int64_t lo, int64_t hi) {
    if (lo > hi) throw std::invalid_argument("Rng::range: lo > hi");
    return lo + static_cast<int64_t>(below(static_cast<uint64_t>(hi - lo) + 1));
  }

  // Uniform double in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  bool bernoulli(double p) { return uniform() < p; }

  // Knuth's product-of-uniforms method, chunked so exp(-lambda) never
  // underflows for large rates.
  int64_t poisson(double lambda) {
    int64_t total = 0;
    while (lambda > 30.0) {
      total += poisson_small(30.0);
      lambda -= 30.0;
    }
    if (lambda > 0.0) total += poisson_small(lambda);
    return total;
  }

  template <class T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      size_t j = below(i);
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  int64_t poisson_small(double lambda) {
    double limit = std::exp(-lambda);
    int64_t k = 0;
    double p = 1.0;
    do {
      ++k;
      p *= uniform();
    } while (p > limit);
    return k - 1;
  }

  uint64_t state_;
};

}  // namespace rxpipe
