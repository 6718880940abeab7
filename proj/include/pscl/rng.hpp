#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>

namespace pscl {

// Hand-rolled splitmix64 generator. We do not use <random> distributions:
// their output is implementation-defined, and checkpoints must restore the
// generator state bit-exactly from a single u64.
class Rng {
 public:
  Rng() = default;
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() {
    state_ += 0x9E3779B97F4A7C15ull;
    std::uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }

  // [0, 1)
  double uniform01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  // Unbiased integer in [0, n), n >= 1.
  std::uint64_t uniform_int(std::uint64_t n) {
    const std::uint64_t bound = n * ((~std::uint64_t{0}) / n);
    std::uint64_t z = next_u64();
    while (z >= bound) z = next_u64();
    return z % n;
  }

  // Box-Muller. Draws two uniforms per call and discards the sine branch so
  // the generator state stays a single u64 (no cached spare to serialize).
  double normal() {
    const double u1 = 1.0 - uniform01();  // (0, 1]
    const double u2 = uniform01();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
  }

  template <typename T>
  void shuffle(T* begin, std::size_t n) {
    for (std::size_t i = n; i > 1; --i) {
      const std::size_t j = static_cast<std::size_t>(uniform_int(i));
      T tmp = begin[i - 1];
      begin[i - 1] = begin[j];
      begin[j] = tmp;
    }
  }

  std::uint64_t state() const { return state_; }
  void set_state(std::uint64_t s) { state_ = s; }

 private:
  std::uint64_t state_ = 0;
};

inline std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 0xCBF29CE484222325ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001B3ull;
  }
  return h;
}

// Named substream derivation: every component (init/labels/dropout/kmeans/...)
// draws from its own stream so varying one leaves the others untouched.
inline Rng substream(std::uint64_t root_seed, std::string_view name) {
  Rng mix(root_seed ^ fnv1a64(name));
  return Rng(mix.next_u64());
}

}  // namespace pscl
