#pragma once

// Counter-based, splittable random streams.
//
// A stream is identified by a 64-bit key; the n-th draw is mix(key + n * gamma)
// so any draw is addressable without replaying the sequence. Child streams are
// derived by hashing the parent key with a label, which lets every run consume
// a (master_seed, run_index, purpose) triple deterministically.

#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <string_view>

namespace pinet {

namespace detail {

constexpr std::uint64_t kGoldenGamma = 0x9E3779B97F4A7C15ULL;

constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

constexpr std::uint64_t hash_label(std::string_view label) noexcept {
  std::uint64_t h = 0xCBF29CE484222325ULL;  // FNV-1a
  for (char c : label) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001B3ULL;
  }
  return mix64(h);
}

}  // namespace detail

class CounterRng {
 public:
  using result_type = std::uint64_t;

  constexpr explicit CounterRng(std::uint64_t key = 0) noexcept : key_(detail::mix64(key)) {}

  static constexpr result_type min() noexcept { return 0; }
  static constexpr result_type max() noexcept { return std::numeric_limits<result_type>::max(); }

  constexpr result_type operator()() noexcept {
    return detail::mix64(key_ + (++counter_) * detail::kGoldenGamma);
  }

  // Independent child stream; does not advance this stream.
  constexpr CounterRng split(std::uint64_t index) const noexcept {
    CounterRng child;
    child.key_ = detail::mix64(key_ ^ detail::mix64(index + detail::kGoldenGamma));
    return child;
  }

  constexpr CounterRng split(std::string_view label) const noexcept {
    return split(detail::hash_label(label));
  }

  constexpr std::uint64_t key() const noexcept { return key_; }

  // Uniform in [0, 1) with 53 random bits.
  double uniform() noexcept { return static_cast<double>((*this)() >> 11) * 0x1.0p-53; }

  // Standard normal via Box-Muller; one draw per call so streams stay
  // addressable (no cached second variate).
  double normal() noexcept {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

 private:
  std::uint64_t key_ = 0;
  std::uint64_t counter_ = 0;
};

// Stream for one (master_seed, run_index, purpose) triple.
inline CounterRng stream_for(std::uint64_t master_seed, std::uint64_t run_index,
                             std::string_view purpose) {
  return CounterRng(master_seed).split(run_index).split(purpose);
}

}  // namespace pinet
