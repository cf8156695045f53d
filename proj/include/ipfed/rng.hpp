#pragma once

// Deterministic counter-based random streams. Every draw is a pure function
// of (key, counter), so a stream keyed by (seed, purpose, round) always
// replays the same sequence and never interferes with any other stream.
// This is what makes protocol runs exactly reproducible and lets two
// protocol variants share per-round randomness without sharing state.

#include <cmath>
#include <cstdint>

namespace ipfed {

namespace detail {
constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ull;

// splitmix64 finalizer
inline std::uint64_t mix64(std::uint64_t z) {
  z ^= z >> 30;
  z *= 0xBF58476D1CE4E5B9ull;
  z ^= z >> 27;
  z *= 0x94D049BB133111EBull;
  z ^= z >> 31;
  return z;
}
}  // namespace detail

// Stream purposes. Distinct tags give unrelated substreams of one run seed.
enum class StreamTag : std::uint64_t {
  Transform = 1,      // per-round transformation parameters
  Dataset = 2,        // synthetic identity clusters
  ModelInit = 3,      // feature-extractor initialization
  Pairs = 4,          // verification pair sampling
  Participation = 5,  // optional client subsampling
  Trials = 6,         // equivalence-suite case generation
  Regular = 7,        // regular (non-orthonormal) transform sampling
};

inline std::uint64_t stream_key(std::uint64_t seed, StreamTag tag,
                                std::uint64_t index = 0) {
  std::uint64_t k = detail::mix64(seed + detail::kGolden);
  k = detail::mix64(k ^ (static_cast<std::uint64_t>(tag) * detail::kGolden));
  k = detail::mix64(k ^ (index + detail::kGolden));
  return k;
}

class CounterStream {
 public:
  explicit CounterStream(std::uint64_t key) : key_(key) {}

  CounterStream(std::uint64_t seed, StreamTag tag, std::uint64_t index = 0)
      : key_(stream_key(seed, tag, index)) {}

  std::uint64_t next_u64() {
    ++counter_;
    return detail::mix64(key_ + counter_ * detail::kGolden);
  }

  /// Uniform in [0, 1) with 53 random bits.
  double next_unit() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  /// Uniform in [lo, hi).
  double next_uniform(double lo, double hi) {
    return lo + (hi - lo) * next_unit();
  }

  /// Standard normal via Box-Muller; the second draw of each pair is cached.
  double next_normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    const double u1 = 1.0 - next_unit();  // (0, 1], keeps log finite
    const double u2 = next_unit();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 2.0 * 3.14159265358979323846 * u2;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return r * std::cos(a);
  }

  /// Uniform integer in [0, n); rejection sampling, no modulo bias.
  std::uint64_t next_below(std::uint64_t n) {
    const std::uint64_t bound = n * ((~std::uint64_t{0}) / n);
    std::uint64_t x;
    do {
      x = next_u64();
    } while (x >= bound);
    return x % n;
  }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
  double spare_ = 0.0;
  bool have_spare_ = false;
};

}  // namespace ipfed
