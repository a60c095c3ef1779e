#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>

namespace pplab {

/** @brief SplitMix64 finalizer. */
constexpr std::uint64_t mix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/**
 * @brief Counter-based generator: output i is a hash of (key, i).
 *
 * split() derives an independent child stream, so parallel trials can each
 * own a generator without sharing state.
 */
class Rng {
 public:
  using result_type = std::uint64_t;

  explicit Rng(std::uint64_t seed) noexcept : key_(mix64(seed ^ 0x5851f42d4c957f2dULL)) {}

  Rng split(std::uint64_t child) const noexcept {
    Rng r(0);
    r.key_ = mix64(key_ ^ mix64(child + 0x632be59bd9b4e019ULL));
    return r;
  }

  static constexpr result_type min() noexcept { return 0; }
  static constexpr result_type max() noexcept { return std::numeric_limits<result_type>::max(); }

  result_type operator()() noexcept { return mix64(key_ + mix64(counter_++)); }

  /** @brief Uniform on [0, 1) with 53 random bits. */
  double uniform() noexcept { return static_cast<double>((*this)() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }

  /** @brief Standard normal via Box-Muller; consumes two draws. */
  double normal() noexcept {
    double u1 = 1.0 - uniform();
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  /** @brief Uniform integer in [0, n). */
  std::uint64_t index(std::uint64_t n) noexcept {
    // Lemire's multiply-shift; bias is below 2^-64 * n and irrelevant here.
    return static_cast<std::uint64_t>((static_cast<unsigned __int128>((*this)()) * n) >> 64);
  }

  bool bernoulli(double p) noexcept { return uniform() < p; }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

}  // namespace pplab
