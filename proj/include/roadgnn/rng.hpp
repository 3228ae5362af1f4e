#pragma once

#include <cstdint>
#include <utility>
#include <vector>

namespace roadgnn {

// SplitMix64, used as the single source of randomness in the project.
// It is counter-based: the state advances by a fixed odd increment and each
// output is a bijective finalizer of the state, so draw n from seed s equals
// mix(s + (n+1)*GAMMA). Substreams for (seed, key) pairs are derived by
// finalizing the key into the seed, which keeps per-node streams independent
// and makes every sampler reproducible from (seed, key) alone.
class SplitMix64 {
 public:
  static constexpr std::uint64_t kGamma = 0x9E3779B97F4A7C15ULL;

  explicit SplitMix64(std::uint64_t seed = 0) : state_(seed) {}

  static SplitMix64 substream(std::uint64_t seed, std::uint64_t key) {
    return SplitMix64(mix(seed ^ mix(key + kGamma)));
  }

  std::uint64_t next_u64() {
    state_ += kGamma;
    return mix(state_);
  }

  // Uniform double in [0, 1).
  double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }

  // Uniform integer in [0, n); n must be positive. Multiply-shift keeps the
  // draw a pure function of one 64-bit output.
  std::uint64_t uniform_int(std::uint64_t n) {
    return static_cast<std::uint64_t>(
        (static_cast<unsigned __int128>(next_u64()) * static_cast<unsigned __int128>(n)) >> 64);
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::swap(v[i - 1], v[uniform_int(i)]);
    }
  }

  // Identity-based permutation of 0..n-1.
  std::vector<std::uint32_t> permutation(std::uint32_t n) {
    std::vector<std::uint32_t> p(n);
    for (std::uint32_t i = 0; i < n; ++i) p[i] = i;
    shuffle(p);
    return p;
  }

  static std::uint64_t mix(std::uint64_t z) {
    z ^= z >> 30;
    z *= 0xBF58476D1CE4E5B9ULL;
    z ^= z >> 27;
    z *= 0x94D049BB133111EBULL;
    z ^= z >> 31;
    return z;
  }

 private:
  std::uint64_t state_;
};

}  // namespace roadgnn
