#pragma once

#include <cstdint>
#include <initializer_list>

namespace shakelab {

// Counter-based SplitMix64 stream. Draw k (1-based) of a stream with seed s
// is mix(s + k * 0x9E3779B97F4A7C15), so the full state is (seed, counter)
// and can be checkpointed and restored without replaying draws.
//
// Conversions are fixed so sequences are identical across standard
// libraries: uniform() takes the top 53 bits, normal() is Box-Muller on two
// uniforms (cosine branch only), below() uses rejection on the top bits.
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed = 0, std::uint64_t counter = 0)
      : seed_(seed), counter_(counter) {}

  // Independent stream for a (seed, key...) tuple, e.g. (seed, epoch, image).
  static RngStream derive(std::uint64_t seed,
                          std::initializer_list<std::uint64_t> keys);

  std::uint64_t next_u64();
  // Uniform on [0, 1).
  double uniform();
  // Uniform on [lo, hi); returns lo when lo == hi.
  double uniform(double lo, double hi);
  double normal();
  // Uniform integer in [0, n). n must be positive.
  std::uint64_t below(std::uint64_t n);

  std::uint64_t seed() const noexcept { return seed_; }
  std::uint64_t counter() const noexcept { return counter_; }
  void set_counter(std::uint64_t counter) noexcept { counter_ = counter; }

  friend bool operator==(const RngStream&, const RngStream&) = default;

 private:
  std::uint64_t seed_;
  std::uint64_t counter_;
};

std::uint64_t splitmix64_mix(std::uint64_t z) noexcept;

}  // namespace shakelab
