// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string_view>
#include <vector>

namespace promptevo
{

/// Seeded random source with platform-independent distributions.
///
/// The standard library's distributions are implementation-defined, so draws
/// are computed here directly from the 64-bit engine output. Streams for
/// independent consumers are derived by label (`Rng::derive`) instead of
/// sharing one engine, which keeps replay stable when a consumer changes how
/// many numbers it draws.
class Rng
{
  public:
    explicit Rng(std::uint64_t seed);

    /// Child stream keyed by (seed, label, index).
    [[nodiscard]] static std::uint64_t derive_seed(std::uint64_t seed, std::string_view label,
                                                   std::uint64_t index = 0);
    [[nodiscard]] Rng derive(std::string_view label, std::uint64_t index = 0) const;

    std::uint64_t next_u64();
    /// Uniform integer in [0, bound). bound must be positive.
    std::uint64_t uniform_index(std::uint64_t bound);
    /// Uniform real in [0, 1) with 53 bits of precision.
    double uniform01();
    /// Index drawn proportionally to non-negative weights.
    std::size_t categorical(std::span<const double> weights);

    template <typename T>
    void shuffle(std::vector<T>& values)
    {
        for (std::size_t i = values.size(); i > 1; --i)
            std::swap(values[i - 1], values[uniform_index(i)]);
    }

    [[nodiscard]] std::uint64_t seed() const { return _seed; }

  private:
    std::uint64_t _seed;
    std::mt19937_64 _engine;
};

std::uint64_t splitmix64(std::uint64_t x);

} // namespace promptevo
