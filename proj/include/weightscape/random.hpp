#pragma once

// Counter-based random streams.
//
// Every draw is a pure function of (master seed, stream name, element index,
// purpose), so results never depend on iteration order or thread count.
//
//   key     = splitmix64(fnv1a64(name) ^ splitmix64(master_seed))
//   counter = {index_lo, index_hi, purpose, 0}   (purpose: DrawPurpose)
//   block   = Philox4x32-10(counter, key)
//   u1      = ((block[0] << 32 | block[1]) >> 11 + 0.5) * 2^-53   in (0, 1)
//   u2      = ((block[2] << 32 | block[3]) >> 11 + 0.5) * 2^-53   in (0, 1)
//   normal  = sqrt(-2 ln u1) * cos(2 pi u2)          (Box-Muller, cosine arm)
//   uniform = u1

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <string_view>

namespace weightscape {

/// FNV-1a, 64-bit.
constexpr std::uint64_t fnv1a64(std::string_view bytes,
                                std::uint64_t hash = 0xcbf29ce484222325ULL) {
  for (unsigned char ch : bytes) {
    hash ^= ch;
    hash *= 0x100000001b3ULL;
  }
  return hash;
}

constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Philox4x32 with 10 rounds (Salmon et al., Random123).
struct Philox4x32 {
  using Counter = std::array<std::uint32_t, 4>;
  using Key = std::array<std::uint32_t, 2>;

  static constexpr Counter generate(Counter ctr, Key key) {
    for (int round = 0; round < 10; ++round) {
      if (round > 0) {
        key[0] += 0x9E3779B9u;
        key[1] += 0xBB67AE85u;
      }
      const std::uint64_t p0 = std::uint64_t{0xD2511F53u} * ctr[0];
      const std::uint64_t p1 = std::uint64_t{0xCD9E8D57u} * ctr[2];
      const auto hi0 = static_cast<std::uint32_t>(p0 >> 32);
      const auto lo0 = static_cast<std::uint32_t>(p0);
      const auto hi1 = static_cast<std::uint32_t>(p1 >> 32);
      const auto lo1 = static_cast<std::uint32_t>(p1);
      ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
    }
    return ctr;
  }
};

/// Domain separation: draws for different purposes never share counters.
enum class DrawPurpose : std::uint32_t {
  perturb = 0,
  mask = 1,
  init = 2,
  latent = 3,
};

/// Per-name random substream derived from a master seed.
class SeedStream {
 public:
  SeedStream(std::uint64_t master_seed, std::string_view name)
      : key64_(splitmix64(fnv1a64(name) ^ splitmix64(master_seed))) {}

  std::uint64_t key() const noexcept { return key64_; }

  /// Standard-normal draw for element `index`.
  double normal(std::uint64_t index,
                DrawPurpose purpose = DrawPurpose::perturb) const {
    const auto block = raw(index, purpose);
    const double u1 = unit(block[0], block[1]);
    const double u2 = unit(block[2], block[3]);
    return std::sqrt(-2.0 * std::log(u1)) *
           std::cos(2.0 * std::numbers::pi * u2);
  }

  /// Uniform draw in (0, 1) for element `index`.
  double uniform(std::uint64_t index,
                 DrawPurpose purpose = DrawPurpose::mask) const {
    const auto block = raw(index, purpose);
    return unit(block[0], block[1]);
  }

  Philox4x32::Counter raw(std::uint64_t index, DrawPurpose purpose) const {
    return Philox4x32::generate(
        {static_cast<std::uint32_t>(index),
         static_cast<std::uint32_t>(index >> 32),
         static_cast<std::uint32_t>(purpose), 0u},
        {static_cast<std::uint32_t>(key64_),
         static_cast<std::uint32_t>(key64_ >> 32)});
  }

 private:
  static double unit(std::uint32_t hi, std::uint32_t lo) {
    const std::uint64_t bits =
        ((std::uint64_t{hi} << 32) | lo) >> 11;  // 53 significant bits
    return (static_cast<double>(bits) + 0.5) * 0x1.0p-53;
  }

  std::uint64_t key64_;
};

}  // namespace weightscape
