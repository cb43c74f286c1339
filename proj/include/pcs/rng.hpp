#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>

namespace pcs {

/// xoroshiro128** with splitmix64 seeding. The whole state is 16 bytes so it
/// can be stored verbatim in checkpoints. Distribution helpers are written
/// out here so results do not depend on the standard library vendor.
class Rng {
public:
    using result_type = std::uint64_t;
    using State = std::array<std::uint64_t, 2>;

    explicit Rng(std::uint64_t seed = 0) { reseed(seed); }

    void reseed(std::uint64_t seed) {
        std::uint64_t x = seed;
        s_[0] = splitmix(x);
        s_[1] = splitmix(x);
    }

    static constexpr result_type min() { return 0; }
    static constexpr result_type max() { return ~result_type(0); }

    result_type operator()() {
        const std::uint64_t s0 = s_[0];
        std::uint64_t s1 = s_[1];
        const std::uint64_t result = rotl(s0 * 5, 7) * 9;
        s1 ^= s0;
        s_[0] = rotl(s0, 24) ^ s1 ^ (s1 << 16);
        s_[1] = rotl(s1, 37);
        return result;
    }

    /// Uniform integer in [0, n). n must be > 0.
    std::uint64_t uniform_index(std::uint64_t n) {
        const std::uint64_t limit = max() - max() % n;
        std::uint64_t v;
        do {
            v = (*this)();
        } while (v >= limit);
        return v % n;
    }

    /// Uniform double in [0, 1) with 53 random bits.
    double uniform() { return double((*this)() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Standard normal via Box-Muller; the second variate is discarded so
    /// the state fully describes the stream.
    double normal() {
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

    const State& state() const noexcept { return s_; }
    void set_state(const State& s) noexcept { s_ = s; }

    bool operator==(const Rng&) const = default;

private:
    static std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

    static std::uint64_t splitmix(std::uint64_t& x) {
        std::uint64_t z = (x += 0x9E3779B97F4A7C15ULL);
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    State s_{};
};

}  // namespace pcs
