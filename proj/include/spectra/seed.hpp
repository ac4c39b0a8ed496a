#pragma once

#include <cmath>
#include <cstdint>
#include <limits>

namespace spectra {

/// SplitMix64 finalizer. Bijective on 64-bit words.
constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

/// Independent families of streams. Calibration, gating and measurement
/// samples drawn under one master seed never share a stream.
enum class StreamDomain : std::uint64_t {
  Sample = 0,
  Calibration = 1,
  Gate = 2,
  Synthetic = 3,
  Parameter = 4,
};

/// Counter-based stream: the k-th output is splitmix64(key + k * golden).
/// No state beyond (key, counter), so any worker can reproduce any stream.
class RandomStream {
 public:
  using result_type = std::uint64_t;

  explicit constexpr RandomStream(std::uint64_t key) noexcept : key_(key) {}

  static constexpr result_type min() noexcept { return 0; }
  static constexpr result_type max() noexcept {
    return std::numeric_limits<result_type>::max();
  }

  result_type operator()() noexcept { return next_u64(); }

  std::uint64_t next_u64() noexcept {
    return splitmix64(key_ + 0x9E3779B97F4A7C15ULL * counter_++);
  }

  /// Uniform on [0, 1) with 53 random bits.
  double uniform() noexcept {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  /// Uniform on the open interval (0, 1); safe for log() and inverse CDFs.
  double uniform_open() noexcept {
    return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }

  /// Poisson variate by sequential inversion; intended for small means.
  unsigned poisson(double mean) noexcept {
    const double u = uniform();
    double p = std::exp(-mean);
    double cdf = p;
    unsigned k = 0;
    while (u >= cdf && k < 10000) {
      ++k;
      p *= mean / k;
      cdf += p;
    }
    return k;
  }

  std::uint64_t key() const noexcept { return key_; }
  std::uint64_t counter() const noexcept { return counter_; }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

/// Derives the stream for sample `index` as
///   key = splitmix64(splitmix64(master) ^ splitmix64(2*index + 1) ^ splitmix64(~domain)).
/// Stable across platforms and releases; changing it invalidates fixtures.
class SeedPolicy {
 public:
  constexpr SeedPolicy() noexcept = default;
  explicit constexpr SeedPolicy(std::uint64_t master_seed) noexcept : master_(master_seed) {}

  constexpr std::uint64_t master_seed() const noexcept { return master_; }

  constexpr std::uint64_t stream_key(std::uint64_t index,
                                     StreamDomain domain = StreamDomain::Sample) const noexcept {
    const auto d = static_cast<std::uint64_t>(domain);
    return splitmix64(splitmix64(master_) ^ splitmix64(2 * index + 1) ^ splitmix64(~d));
  }

  RandomStream stream(std::uint64_t index, StreamDomain domain = StreamDomain::Sample) const noexcept {
    return RandomStream(stream_key(index, domain));
  }

  /// A policy whose streams are disjoint from this one's; used to give each
  /// point of a parameter grid its own family without reshuffling indices.
  constexpr SeedPolicy child(std::uint64_t tag) const noexcept {
    return SeedPolicy(splitmix64(master_ ^ splitmix64(0xC2B2AE3D27D4EB4FULL + tag)));
  }

 private:
  std::uint64_t master_ = 0;
};

}  // namespace spectra
