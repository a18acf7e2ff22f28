#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>

namespace pgd {

/// Deterministic 64-bit generator (SplitMix64, Steele et al. 2014).
///
/// All seeded behaviour in this library is defined in terms of this
/// generator so that results are reproducible across platforms and can be
/// re-derived in other languages. The update rule is:
///
///   state += 0x9E3779B97F4A7C15
///   z = state
///   z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
///   z = (z ^ (z >> 27)) * 0x94D049BB133111EB
///   return z ^ (z >> 31)
class SplitMix64 {
public:
    explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next_u64() {
        state_ += 0x9E3779B97F4A7C15ULL;
        std::uint64_t z = state_;
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    /// Uniform double in [0, 1), 53 random bits.
    double next_double() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    /// Uniform integer in [0, n). n must be > 0.
    /// Defined as floor(next_double() * n); the tiny modulo bias of this
    /// mapping is irrelevant here and the definition is easy to replicate.
    std::size_t next_index(std::size_t n) {
        auto idx = static_cast<std::size_t>(next_double() * static_cast<double>(n));
        return idx < n ? idx : n - 1;
    }

    /// Standard normal deviate via Box-Muller. Consumes two uniforms per
    /// pair; the second deviate of the pair is cached.
    double next_normal() {
        if (have_cached_) {
            have_cached_ = false;
            return cached_;
        }
        double u1 = 0.0;
        do {
            u1 = next_double();
        } while (u1 <= 0.0);
        const double u2 = next_double();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 2.0 * 3.141592653589793238462643383279502884 * u2;
        cached_ = r * std::sin(theta);
        have_cached_ = true;
        return r * std::cos(theta);
    }

private:
    std::uint64_t state_;
    bool have_cached_ = false;
    double cached_ = 0.0;
};

/// FNV-1a 64-bit hash over the bytes of `s`.
inline std::uint64_t fnv1a64(std::string_view s) {
    std::uint64_t h = 14695981039346656037ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

/// Per-item seed derivation: one SplitMix64 step of (seed XOR fnv1a64(tag)).
/// Used by the batch pipeline so that per-chip randomness is independent of
/// scheduling and worker count.
inline std::uint64_t derive_seed(std::uint64_t global_seed, std::string_view tag) {
    SplitMix64 g(global_seed ^ fnv1a64(tag));
    return g.next_u64();
}

} // namespace pgd
