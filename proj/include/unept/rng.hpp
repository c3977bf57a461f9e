#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>

namespace unept {

inline std::uint64_t splitmix64(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

/// Deterministic PRNG with explicit stream keying. Every draw is a pure
/// function of (seed, purpose, indices), which is what makes seeded runs
/// replayable and checkpoint resume bit-identical: no hidden global state.
class Prng {
public:
    explicit Prng(std::uint64_t seed) : state_(seed ^ 0x243f6a8885a308d3ull) {
        state_ = mix(state_);
    }

    /// Derives an independent stream for (seed, purpose, a, b).
    static Prng keyed(std::uint64_t seed, std::string_view purpose,
                      std::uint64_t a = 0, std::uint64_t b = 0) {
        std::uint64_t h = seed;
        for (char c : purpose) h = mix(h ^ static_cast<unsigned char>(c));
        h = mix(h ^ a);
        h = mix(h ^ b);
        return Prng(h);
    }

    std::uint64_t next_u64() { return splitmix64(state_); }

    /// Uniform in [0, 1).
    double uniform() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [0, n). n must be positive.
    std::uint64_t uniform_int(std::uint64_t n) { return next_u64() % n; }

    /// Standard normal via Box-Muller (second value cached).
    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = 0.0;
        while (u1 <= 0.0) u1 = uniform();
        double u2 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double theta = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(theta);
        have_spare_ = true;
        return r * std::cos(theta);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    bool bernoulli(double p) { return uniform() < p; }

private:
    static std::uint64_t mix(std::uint64_t x) {
        std::uint64_t s = x;
        return splitmix64(s);
    }

    std::uint64_t state_;
    double spare_ = 0.0;
    bool have_spare_ = false;
};

}  // namespace unept
