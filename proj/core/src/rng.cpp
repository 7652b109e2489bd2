#include "shakelab/rng.hpp"

#include <cmath>
#include <numbers>

namespace shakelab {

namespace {
constexpr std::uint64_t kGamma = 0x9E3779B97F4A7C15ULL;
}

std::uint64_t splitmix64_mix(std::uint64_t z) noexcept {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

RngStream RngStream::derive(std::uint64_t seed,
                            std::initializer_list<std::uint64_t> keys) {
  std::uint64_t h = splitmix64_mix(seed + kGamma);
  for (std::uint64_t k : keys) {
    h = splitmix64_mix(h ^ splitmix64_mix(k + kGamma));
  }
  return RngStream(h);
}

std::uint64_t RngStream::next_u64() {
  ++counter_;
  return splitmix64_mix(seed_ + counter_ * kGamma);
}

double RngStream::uniform() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double RngStream::uniform(double lo, double hi) {
  return lo + (hi - lo) * uniform();
}

double RngStream::normal() {
  const double u1 = 1.0 - uniform();  // (0, 1]
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) *
         std::cos(2.0 * std::numbers::pi * u2);
}

std::uint64_t RngStream::below(std::uint64_t n) {
  // Largest multiple of n that fits; reject the tail to stay unbiased.
  const std::uint64_t limit = (~std::uint64_t{0}) - (~std::uint64_t{0}) % n;
  std::uint64_t x = next_u64();
  while (x >= limit) x = next_u64();
  return x % n;
}

}  // namespace shakelab
