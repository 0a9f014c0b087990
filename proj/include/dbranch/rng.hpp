#pragma once

#include <array>
#include <cstdint>
#include <limits>

namespace dbranch {

/// Philox4x32-10 counter-based generator.
///
/// The 128-bit counter is (block_lo, block_hi, stream_a, stream_b): each
/// (key, stream_a, stream_b) triple is an independent stream, so the draw
/// sequence of sample (i, j) depends only on (seed, i, j) and never on which
/// thread produced it. Satisfies UniformRandomBitGenerator.
class Philox {
public:
    using result_type = std::uint32_t;

    Philox(std::uint64_t seed, std::uint32_t stream_a, std::uint32_t stream_b)
        : key_{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)},
          counter_{0, 0, stream_a, stream_b}
    {
    }

    static constexpr result_type min() { return 0; }
    static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

    result_type operator()()
    {
        if (used_ == 4) refill();
        return out_[used_++];
    }

    /// Number of 128-bit blocks generated so far.
    std::uint64_t blocks() const { return (static_cast<std::uint64_t>(counter_[1]) << 32) | counter_[0]; }

private:
    static constexpr std::uint32_t kM0 = 0xD2511F53;
    static constexpr std::uint32_t kM1 = 0xCD9E8D57;
    static constexpr std::uint32_t kW0 = 0x9E3779B9;
    static constexpr std::uint32_t kW1 = 0xBB67AE85;

    void refill()
    {
        std::array<std::uint32_t, 4> c = counter_;
        std::array<std::uint32_t, 2> k = key_;
        for (int round = 0; round < 10; ++round) {
            const std::uint64_t p0 = static_cast<std::uint64_t>(kM0) * c[0];
            const std::uint64_t p1 = static_cast<std::uint64_t>(kM1) * c[2];
            const auto hi0 = static_cast<std::uint32_t>(p0 >> 32);
            const auto lo0 = static_cast<std::uint32_t>(p0);
            const auto hi1 = static_cast<std::uint32_t>(p1 >> 32);
            const auto lo1 = static_cast<std::uint32_t>(p1);
            c = {hi1 ^ c[1] ^ k[0], lo1, hi0 ^ c[3] ^ k[1], lo0};
            k[0] += kW0;
            k[1] += kW1;
        }
        out_ = c;
        used_ = 0;
        if (++counter_[0] == 0) ++counter_[1];
    }

    std::array<std::uint32_t, 2> key_;
    std::array<std::uint32_t, 4> counter_;
    std::array<std::uint32_t, 4> out_{};
    int used_ = 4;
};

/// SplitMix64 finalizer, used to derive independent keys for separate
/// purposes (point sampling, trees, training) from one user seed.
constexpr std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t purpose)
{
    std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (purpose + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

namespace seed_purpose {
inline constexpr std::uint64_t kPoints = 1;
inline constexpr std::uint64_t kTrees = 2;
inline constexpr std::uint64_t kNetworkInit = 3;
inline constexpr std::uint64_t kRepetition = 4;
}  // namespace seed_purpose

}  // namespace dbranch
