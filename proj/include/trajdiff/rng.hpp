#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <string_view>

namespace trajdiff {

namespace detail {
inline std::uint64_t splitmix_finalize(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}
}  // namespace detail

/// Counter-style PRNG (SplitMix64): draw i of stream `seed` is
/// finalize(seed + (i+1)*gamma), a pure function of (seed, i). Uniform and
/// integer draws are bit-identical across platforms; Gaussian draws go through
/// libm (log/sin/cos) and are bit-identical per platform only.
class CounterRng {
 public:
  explicit CounterRng(std::uint64_t seed) : seed_(seed) {}

  std::uint64_t next_u64() { return detail::splitmix_finalize(seed_ + kGamma * ++counter_); }

  /// 53-bit uniform in [0, 1)
  double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double next_uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }

  /// uniform integer in [0, n), n > 0
  std::uint64_t next_below(std::uint64_t n) {
    return static_cast<std::uint64_t>((static_cast<unsigned __int128>(next_u64()) * n) >> 64);
  }

  /// standard normal, Box-Muller with one cached spare
  double next_gaussian() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = next_double();
    const double u2 = next_double();
    if (u1 < 1e-300) u1 = 1e-300;
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return r * std::cos(a);
  }

 private:
  static constexpr std::uint64_t kGamma = 0x9e3779b97f4a7c15ULL;
  std::uint64_t seed_ = 0;
  std::uint64_t counter_ = 0;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

/// Deterministic sub-stream derivation, order-insensitive to callers.
inline std::uint64_t rng_derive(std::uint64_t seed, std::uint64_t v) {
  return detail::splitmix_finalize(seed ^ detail::splitmix_finalize(v + 0x632be59bd9b4e019ULL));
}

inline std::uint64_t rng_derive(std::uint64_t seed, std::string_view tag) {
  std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
  for (const char c : tag) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return detail::splitmix_finalize(seed ^ h);
}

}  // namespace trajdiff
