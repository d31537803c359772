#pragma once

#include <cmath>
#include <cstdint>

#include "cdo/errors.hpp"

namespace cdo {

/// Deterministic 64-bit PRNG: splitmix64 (Vigna's public-domain reference
/// algorithm). The raw u64 and uniform streams are pure integer/IEEE
/// arithmetic and therefore bit-identical for a given seed on any platform.
/// Normal draws go through std::log/std::cos, whose last-ulp behaviour is
/// libm-specific; same-binary replays are still exact.
class SeededRng {
public:
    explicit SeededRng(std::uint64_t seed) noexcept : state_(seed) {}

    std::uint64_t next_u64() noexcept {
        std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    /// Uniform draw in [lo, hi). Advances the stream by one u64.
    double uniform(double lo, double hi) {
        if (!(lo < hi)) {
            throw ParamError("SeededRng::uniform: requires lo < hi");
        }
        const double u = static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
        return lo + (hi - lo) * u;
    }

    /// Uniform integer in [lo, hi]. Advances the stream by one u64.
    int uniform_int(int lo, int hi) {
        if (lo > hi) {
            throw ParamError("SeededRng::uniform_int: requires lo <= hi");
        }
        const std::uint64_t span = static_cast<std::uint64_t>(hi) - lo + 1;
        return lo + static_cast<int>(next_u64() % span);
    }

    /// Gaussian draw via Box-Muller (cosine branch only); always consumes
    /// exactly two u64 draws so the stream position stays predictable.
    /// std == 0 returns mean exactly.
    double normal(double mean, double std) {
        if (std < 0.0) {
            throw ParamError("SeededRng::normal: requires std >= 0");
        }
        if (std == 0.0) return mean;
        const double u1 = (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
        const double u2 = (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
        constexpr double two_pi = 6.283185307179586476925286766559;
        return mean + std * std::sqrt(-2.0 * std::log(u1)) * std::cos(two_pi * u2);
    }

    std::uint64_t state() const noexcept { return state_; }

    /// Independent sub-stream for a (master seed, index) pair, e.g. one
    /// stream per scene or per epoch. The derivation is one splitmix64 step
    /// from a state that mixes the index with the golden-gamma constant.
    static SeededRng derive(std::uint64_t master, std::uint64_t index) noexcept {
        SeededRng mixer(master ^ (0xD1B54A32D192ED03ULL + index * 0x9E3779B97F4A7C15ULL));
        return SeededRng(mixer.next_u64());
    }

private:
    std::uint64_t state_;
};

}  // namespace cdo
