#pragma once

#include <cmath>
#include <cstdint>

namespace ntklab {

/// Deterministic counter-based random generator.
///
/// Output i of a stream with key k is splitmix64's finalizer applied to
/// k + i * golden-ratio increment, so the sequence is a pure function of
/// (key, counter) and identical on every platform. `fork` derives an
/// independent stream key, which lets callers hand out per-layer or
/// per-probe substreams without coordinating counters.
class CounterRng {
 public:
  explicit CounterRng(std::uint64_t key) : key_(key) {}

  std::uint64_t key() const { return key_; }

  std::uint64_t next_u64() {
    counter_ += 1;
    return mix(key_ + 0x9E3779B97F4A7C15ULL * counter_);
  }

  /// Independent substream; deterministic in (key, stream).
  CounterRng fork(std::uint64_t stream) const {
    return CounterRng(mix(key_ ^ (0xA0761D6478BD642FULL + stream * 0x8BB84B93962EACC9ULL)));
  }

  /// Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  /// Standard normal via Box-Muller, cosine branch only. Two uniforms are
  /// consumed per draw; the sine companion is discarded so that draw i
  /// depends only on counters 2i-1 and 2i.
  double gaussian() {
    const double u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log1p(-u1));  // log(1-u1), 1-u1 in (0,1]
    return r * std::cos(6.283185307179586476925286766559 * u2);
  }

  static std::uint64_t mix(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

}  // namespace ntklab
