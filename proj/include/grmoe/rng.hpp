#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace grmoe {

// Deterministic, splittable RNG: xoshiro256++ seeded through SplitMix64.
// <random> engines are avoided on purpose — distribution implementations
// differ across standard libraries, and experiment reproduction requires
// bit-identical streams for a given (seed, label) pair on any platform.

inline std::uint64_t splitmix64(std::uint64_t& x) {
    x += 0x9e3779b97f4a7c15ULL;
    std::uint64_t z = x;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

inline std::uint64_t fnv1a64(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

class Rng {
public:
    explicit Rng(std::uint64_t seed) : seed_(seed) {
        std::uint64_t x = seed;
        for (auto& w : state_) w = splitmix64(x);
    }

    // Independent stream derived from this stream's seed and a purpose label.
    // Derivation uses the seed, not the position, so the substream does not
    // depend on how much of the parent stream has been consumed.
    Rng substream(std::string_view label) const {
        std::uint64_t x = seed_ ^ fnv1a64(label);
        return Rng(splitmix64(x));
    }

    std::uint64_t next() {
        const std::uint64_t result = rotl(state_[0] + state_[3], 23) + state_[0];
        const std::uint64_t t = state_[1] << 17;
        state_[2] ^= state_[0];
        state_[3] ^= state_[1];
        state_[1] ^= state_[2];
        state_[0] ^= state_[3];
        state_[2] ^= t;
        state_[3] = rotl(state_[3], 45);
        return result;
    }

    // Uniform on [0, 1), 53-bit resolution.
    double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

    // Standard normal via Box–Muller. Always consumes exactly two uniforms
    // and discards the sine branch: a fixed consumption pattern keeps streams
    // reproducible regardless of how many gaussians a caller interleaves.
    double gaussian() {
        const double u1 = 1.0 - uniform();  // (0, 1], keeps the log finite
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        return r * std::cos(2.0 * M_PI * u2);
    }

    std::uint64_t seed() const { return seed_; }

    // Serializable snapshot: seed word followed by the four state words.
    std::array<std::uint64_t, 5> words() const {
        return {seed_, state_[0], state_[1], state_[2], state_[3]};
    }
    static Rng from_words(const std::array<std::uint64_t, 5>& w) {
        Rng r(w[0]);
        r.state_ = {w[1], w[2], w[3], w[4]};
        return r;
    }

private:
    static std::uint64_t rotl(std::uint64_t x, int k) {
        return (x << k) | (x >> (64 - k));
    }

    std::uint64_t seed_;
    std::array<std::uint64_t, 4> state_{};
};

}  // namespace grmoe
