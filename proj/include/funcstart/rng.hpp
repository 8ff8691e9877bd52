#pragma once

#include <cstdint>
#include <random>

namespace funcstart {

/// Seeded generator with platform-independent output.
///
/// std::mt19937_64's raw output is fixed by the standard, but the standard
/// distributions are not, so bounded draws are derived from the raw stream
/// here instead of through std::uniform_int_distribution.
class Rng {
public:
    explicit Rng(std::uint64_t seed)
        : engine_(seed)
    {
    }

    /// Stream derived from (seed, key); distinct keys give independent
    /// streams, so per-item work can run in any order.
    static Rng split(std::uint64_t seed, std::uint64_t key) { return Rng(mix(seed ^ mix(key + 0x9E3779B97F4A7C15ULL))); }

    std::uint64_t next() { return engine_(); }

    std::uint8_t byte() { return static_cast<std::uint8_t>(engine_() >> 56); }

    /// Uniform in [0, bound). bound must be > 0.
    std::uint64_t below(std::uint64_t bound)
    {
        // Rejection sampling keeps the draw unbiased.
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
        std::uint64_t v;
        do {
            v = engine_();
        } while (v >= limit);
        return v % bound;
    }

    /// Uniform in [lo, hi].
    std::uint64_t between(std::uint64_t lo, std::uint64_t hi) { return lo + below(hi - lo + 1); }

    /// Uniform in [0, 1).
    double unit() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    bool chance(double p) { return unit() < p; }

    /// SplitMix64 finalizer.
    static std::uint64_t mix(std::uint64_t z)
    {
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

private:
    std::mt19937_64 engine_;
};

} // namespace funcstart
