#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <random>
#include <stdexcept>

namespace sdgc {

// Seeded generator with counter-based splitting. All Gaussian/Gamma draws are
// hand-rolled on top of the raw 64-bit stream so that sequences are identical
// across standard library implementations.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : gen_(mix(seed)) {}

    // Derives an independent stream from (seed, counters...). Streams with
    // different counter tuples never share state.
    static Rng split(std::uint64_t seed, std::initializer_list<std::uint64_t> counters) {
        std::uint64_t s = mix(seed);
        for (std::uint64_t c : counters) {
            s = mix(s ^ (c + 0x9e3779b97f4a7c15ULL));
        }
        return Rng(s, tag{});
    }

    std::uint64_t next_u64() { return gen_(); }

    // Uniform in [0, 1), 53-bit resolution.
    double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [0, n).
    std::uint64_t uniform_int(std::uint64_t n) {
        if (n == 0) throw std::invalid_argument("uniform_int: n must be positive");
        // rejection sampling to avoid modulo bias
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        std::uint64_t v = gen_();
        while (v >= limit) v = gen_();
        return v % n;
    }

    // Standard normal via Box-Muller; one value per call, no cached spare.
    double normal() {
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
    }

    // Gamma(shape, scale 1) via Marsaglia-Tsang, boosted for shape < 1.
    double gamma(double shape) {
        if (!(shape > 0.0)) throw std::invalid_argument("gamma: shape must be positive");
        if (shape < 1.0) {
            const double g = gamma(shape + 1.0);
            double u = uniform();
            while (u <= 0.0) u = uniform();
            return g * std::pow(u, 1.0 / shape);
        }
        const double d = shape - 1.0 / 3.0;
        const double c = 1.0 / std::sqrt(9.0 * d);
        for (;;) {
            double x;
            double v;
            do {
                x = normal();
                v = 1.0 + c * x;
            } while (v <= 0.0);
            v = v * v * v;
            double u = uniform();
            while (u <= 0.0) u = uniform();
            if (std::log(u) < 0.5 * x * x + d - d * v + d * std::log(v)) {
                return d * v;
            }
        }
    }

private:
    struct tag {};
    Rng(std::uint64_t premixed, tag) : gen_(premixed) {}

    // splitmix64 finalizer
    static std::uint64_t mix(std::uint64_t x) {
        x += 0x9e3779b97f4a7c15ULL;
        x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
        x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
        return x ^ (x >> 31);
    }

    std::mt19937_64 gen_;
};

}  // namespace sdgc
