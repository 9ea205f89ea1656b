#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <span>

#include "fkp/numeric.hpp"

namespace fkp {

using PhiloxCounter = std::array<std::uint32_t, 4>;
using PhiloxKey = std::array<std::uint32_t, 2>;

/// Philox4x32 with 10 rounds (Salmon et al., Random123). Pure function of
/// (counter, key).
inline PhiloxCounter philox4x32_10(PhiloxCounter ctr, PhiloxKey key) noexcept {
  constexpr std::uint32_t m0 = 0xD2511F53u, m1 = 0xCD9E8D57u;
  constexpr std::uint32_t w0 = 0x9E3779B9u, w1 = 0xBB67AE85u;
  for (int round = 0; round < 10; ++round) {
    const std::uint64_t p0 = std::uint64_t{m0} * ctr[0];
    const std::uint64_t p1 = std::uint64_t{m1} * ctr[2];
    const auto hi0 = static_cast<std::uint32_t>(p0 >> 32), lo0 = static_cast<std::uint32_t>(p0);
    const auto hi1 = static_cast<std::uint32_t>(p1 >> 32), lo1 = static_cast<std::uint32_t>(p1);
    ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
    key[0] += w0;
    key[1] += w1;
  }
  return ctr;
}

/// Independent stream families. Each consumer of randomness uses its own
/// domain so that e.g. initial sampling never aliases diffusion noise.
enum class StreamDomain : std::uint32_t {
  initial = 1,
  diffusion = 2,
  probe = 3,
  auxiliary = 4,
};

/// Counter-based stream derivation: the variates for (domain, index, step)
/// depend on nothing else, so any evaluation order (or thread count) gives
/// the same numbers.
class RngPolicy {
public:
  explicit RngPolicy(std::uint64_t seed = 0) noexcept : seed_(seed) {}

  std::uint64_t seed() const noexcept { return seed_; }

  /// Raw 128-bit block `block` of stream (domain, index, step).
  PhiloxCounter block(StreamDomain domain, std::uint64_t index, std::uint64_t step,
                      std::uint32_t block) const noexcept {
    const PhiloxCounter ctr{block, static_cast<std::uint32_t>(step),
                            static_cast<std::uint32_t>(index),
                            (static_cast<std::uint32_t>(domain) << 24) ^
                                static_cast<std::uint32_t>(index >> 32) ^
                                (static_cast<std::uint32_t>(step >> 32) << 12)};
    const PhiloxKey key{static_cast<std::uint32_t>(seed_), static_cast<std::uint32_t>(seed_ >> 32)};
    return philox4x32_10(ctr, key);
  }

  /// Uniform variates in (0, 1].
  void uniforms(StreamDomain domain, std::uint64_t index, std::uint64_t step,
                std::span<double> out) const noexcept {
    std::uint32_t blk = 0;
    for (std::size_t j = 0; j < out.size(); j += 2, ++blk) {
      const auto r = block(domain, index, step, blk);
      out[j] = to_unit(r[0], r[1]);
      if (j + 1 < out.size()) out[j + 1] = to_unit(r[2], r[3]);
    }
  }

  /// Standard normal variates via Box-Muller, two per Philox block.
  void normals(StreamDomain domain, std::uint64_t index, std::uint64_t step,
               std::span<double> out) const noexcept {
    std::uint32_t blk = 0;
    for (std::size_t j = 0; j < out.size(); j += 2, ++blk) {
      const auto r = block(domain, index, step, blk);
      const double u1 = to_unit(r[0], r[1]);
      const double u2 = to_unit(r[2], r[3]);
      const double rad = std::sqrt(-2.0 * std::log(u1));
      const double ang = 2.0 * pi * u2;
      out[j] = rad * std::cos(ang);
      if (j + 1 < out.size()) out[j + 1] = rad * std::sin(ang);
    }
  }

private:
  static double to_unit(std::uint32_t hi, std::uint32_t lo) noexcept {
    const std::uint64_t bits = ((std::uint64_t{hi} << 32) | lo) >> 11;
    return static_cast<double>(bits + 1) * 0x1.0p-53;
  }

  std::uint64_t seed_;
};

} // namespace fkp
