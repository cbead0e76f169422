#pragma once

// Stable hashing and a counter-based generator. Every random quantity in the
// library is a pure function of (key, counter), so results never depend on
// thread scheduling or on how many values were drawn elsewhere.

#include <cmath>
#include <cstdint>
#include <numbers>
#include <string_view>

namespace curator {

constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// FNV-1a over raw bytes. Stable across platforms and runs.
constexpr std::uint64_t fnv1a64(std::string_view bytes,
                                std::uint64_t h = 0xcbf29ce484222325ULL) noexcept {
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

/// Hash of a string, finalized through splitmix so low bits are usable.
constexpr std::uint64_t stable_hash(std::string_view bytes) noexcept {
  return splitmix64(fnv1a64(bytes));
}

constexpr std::uint64_t hash_combine(std::uint64_t a, std::uint64_t b) noexcept {
  return splitmix64(a ^ (splitmix64(b) + 0x9e3779b97f4a7c15ULL + (a << 6) + (a >> 2)));
}

/// Uniform double in the open interval (0, 1) from 64 random bits.
constexpr double to_open_unit(std::uint64_t bits) noexcept {
  return (static_cast<double>(bits >> 11) + 0.5) * 0x1.0p-53;
}

/// Counter-based stream: value i is splitmix64(key + i * golden), so any
/// element of the stream can be computed independently.
class CounterRng {
 public:
  constexpr CounterRng(std::uint64_t key, std::uint64_t counter = 0) noexcept
      : key_(splitmix64(key)), counter_(counter) {}

  constexpr std::uint64_t next_u64() noexcept {
    return splitmix64(key_ + 0x9e3779b97f4a7c15ULL * ++counter_);
  }

  constexpr double uniform() noexcept { return to_open_unit(next_u64()); }

  /// Standard normal via Box-Muller. Consumes two draws per call.
  double normal() noexcept {
    const double u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

 private:
  std::uint64_t key_;
  std::uint64_t counter_;
};

}  // namespace curator
