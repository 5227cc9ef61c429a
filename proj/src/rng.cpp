// SPDX-License-Identifier: Apache-2.0
#include <promptevo/error.hpp>
#include <promptevo/hashing.hpp>
#include <promptevo/rng.hpp>

#include <limits>

namespace promptevo
{

std::uint64_t splitmix64(std::uint64_t x)
{
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

Rng::Rng(std::uint64_t seed): _seed(seed), _engine(splitmix64(seed))
{
}

std::uint64_t Rng::derive_seed(std::uint64_t seed, std::string_view label, std::uint64_t index)
{
    return splitmix64(splitmix64(seed ^ fnv1a64(label)) + index);
}

Rng Rng::derive(std::string_view label, std::uint64_t index) const
{
    return Rng(derive_seed(_seed, label, index));
}

std::uint64_t Rng::next_u64()
{
    return _engine();
}

std::uint64_t Rng::uniform_index(std::uint64_t bound)
{
    if (bound == 0)
        throw PreconditionError("uniform_index bound must be positive");
    // Rejection sampling removes modulo bias.
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() - std::numeric_limits<std::uint64_t>::max() % bound;
    std::uint64_t x = 0;
    do
        x = next_u64();
    while (x >= limit);
    return x % bound;
}

double Rng::uniform01()
{
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

std::size_t Rng::categorical(std::span<const double> weights)
{
    double total = 0.0;
    for (double w: weights)
    {
        if (!(w >= 0.0))
            throw PreconditionError("categorical weights must be non-negative");
        total += w;
    }
    if (!(total > 0.0))
        throw PreconditionError("categorical weights must not all be zero");
    const double u = uniform01() * total;
    double acc = 0.0;
    std::size_t last_positive = 0;
    for (std::size_t i = 0; i < weights.size(); ++i)
    {
        if (weights[i] <= 0.0)
            continue;
        last_positive = i;
        acc += weights[i];
        if (u < acc)
            return i;
    }
    return last_positive;
}

} // namespace promptevo
