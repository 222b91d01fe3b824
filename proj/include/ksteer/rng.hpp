#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <vector>

namespace ksteer {

/// xoshiro256** seeded through splitmix64. The stream for a given seed is fixed
/// by this implementation and does not depend on the standard library.
class SeededRng {
public:
    explicit SeededRng(std::uint64_t seed = 0);

    [[nodiscard]] std::uint64_t seed() const noexcept { return seed_; }

    std::uint64_t next_u64();
    /// Uniform in [0, 1) with 53 bits of resolution.
    double uniform();
    /// Uniform integer in [0, n). n must be > 0.
    std::size_t uniform_index(std::size_t n);
    /// Standard normal via Box-Muller; pairs are cached.
    double gaussian();

    /// Fisher-Yates permutation of 0..n-1.
    std::vector<std::size_t> permutation(std::size_t n);

    /// Independent child stream; deterministic in (state, stream_id).
    SeededRng fork(std::uint64_t stream_id);

private:
    std::uint64_t seed_;
    std::array<std::uint64_t, 4> state_{};
    bool has_spare_ = false;
    double spare_ = 0.0;
};

std::uint64_t splitmix64(std::uint64_t& state);

}  // namespace ksteer
