#pragma once

#include <array>
#include <cstdint>
#include <vector>

namespace qdm {

/// One step of splitmix64; used for seeding and for deriving per-item seeds.
std::uint64_t splitmix64(std::uint64_t& state) noexcept;

/// Derives an independent seed from a base seed and an index.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t index) noexcept;

/// xoshiro256** seeded through splitmix64. Output depends only on the seed, never on
/// the platform or standard library (no std:: distributions are used).
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) noexcept;

    std::uint64_t next_u64() noexcept;
    /// Uniform in [0, 1) with 53 random bits.
    double uniform() noexcept;
    double uniform(double lo, double hi) noexcept;
    /// Unbiased integer in [0, n).
    std::uint64_t below(std::uint64_t n) noexcept;
    /// Standard normal via Box-Muller.
    double normal() noexcept;

private:
    std::array<std::uint64_t, 4> s_{};
};

/// Draws max(1, round(gamma * n)) distinct indices from [0, n) uniformly without
/// replacement. The result is sorted ascending.
std::vector<std::size_t> sample_indices(Rng& rng, std::size_t n, double gamma);

/// Round-half-to-even, independent of the current floating-point environment.
double round_half_even(double x) noexcept;

}  // namespace qdm
