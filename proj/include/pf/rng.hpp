#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>

namespace pf {

// Deterministic counter-based generator (splitmix64). The state advances by a
// fixed odd constant and every output is a pure mix of the counter, so a seed
// fully determines the stream on every platform. Never replace this with a
// platform default engine: checkpoints and samplers depend on the exact
// stream.
//
// Integer outputs are bit-reproducible everywhere. normal() goes through
// Box-Muller (sqrt/log/cos in double); given an IEEE-754 libm the float
// stream is reproducible as well, and it is always reproducible on one
// platform, which is what the determinism tests assert.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next_u64() {
        state_ += 0x9E3779B97F4A7C15ull;
        std::uint64_t z = state_;
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
        return z ^ (z >> 31);
    }

    // Uniform in [0, 1), 53-bit resolution.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // Uniform integer in [0, n). floor(uniform()*n); n must be > 0.
    std::uint64_t uniform_below(std::uint64_t n) {
        return static_cast<std::uint64_t>(uniform() * static_cast<double>(n));
    }

    // Standard normal via Box-Muller. Consumes exactly two u64 draws per call
    // (no cached spare), so interleaving with other draws stays predictable.
    double normal() {
        double u1 = uniform();
        double u2 = uniform();
        if (u1 <= 0.0) u1 = 0x1.0p-53;
        double r = std::sqrt(-2.0 * std::log(u1));
        return r * std::cos(6.283185307179586476925286766559 * u2);
    }

    float normal_f() { return static_cast<float>(normal()); }

    void fill_normal(float* p, std::size_t n) {
        for (std::size_t i = 0; i < n; ++i) p[i] = normal_f();
    }

    std::uint64_t state() const { return state_; }

private:
    std::uint64_t state_;
};

}  // namespace pf
