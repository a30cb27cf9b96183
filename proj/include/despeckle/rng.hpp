#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <string_view>
#include <vector>

namespace despeckle::rng {

// splitmix64 finalizer. Fast, well-mixed, and trivially portable, which is
// what we need: every random draw in the library must be a pure function of
// (seed, logical position) so results never depend on thread scheduling.
inline std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

/// Derives a child seed from a parent seed and a path of integers.
inline std::uint64_t derive(std::uint64_t seed, std::initializer_list<std::uint64_t> path) {
  std::uint64_t s = mix64(seed ^ 0x5eedba5eba11ull);
  for (std::uint64_t p : path) s = mix64(s ^ mix64(p));
  return s;
}

/// FNV-1a over a string, for seeding from filenames.
inline std::uint64_t hash_string(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

// Sequential random stream. Uniforms come from a splitmix64 counter, normals
// from Box-Muller; no libstdc++ distributions are used so that a given seed
// produces the same draws on every build.
class Stream {
 public:
  explicit Stream(std::uint64_t seed) : state_(mix64(seed ^ 0x73747265616dull)) {}

  std::uint64_t next_u64() {
    state_ += 0x9e3779b97f4a7c15ull;
    std::uint64_t x = state_;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
  }

  /// Uniform draw in (0, 1]; never returns 0 so log() stays finite.
  double next_unit() {
    return static_cast<double>((next_u64() >> 11) + 1) * (1.0 / 9007199254740992.0);
  }

  /// Standard normal draw (Box-Muller, pair cached).
  double next_normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    const double u1 = next_unit();
    const double u2 = next_unit();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return r * std::cos(a);
  }

  /// Uniform integer in [0, n).
  std::uint64_t next_below(std::uint64_t n) { return next_u64() % n; }

 private:
  std::uint64_t state_;
  double spare_ = 0.0;
  bool have_spare_ = false;
};

/// n i.i.d. standard normal draws for the given seed.
inline std::vector<double> normal_field(std::size_t n, std::uint64_t seed) {
  std::vector<double> out(n);
  Stream s(seed);
  for (auto& v : out) v = s.next_normal();
  return out;
}

}  // namespace despeckle::rng
