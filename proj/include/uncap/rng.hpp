#pragma once

#include <cmath>
#include <cstdint>

namespace uncap {

// splitmix64; used both as a generator and to mix (seed, cav, tick) into
// per-stream seeds. Chosen over std::mt19937 + std::normal_distribution so
// that streams are bit-identical across standard library implementations.
struct Rng {
    uint64_t state;

    explicit Rng(uint64_t seed) : state(seed) {}

    uint64_t next_u64() {
        uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    // Uniform in [0, 1).
    double next_double() { return (next_u64() >> 11) * 0x1.0p-53; }

    // Standard normal via Box-Muller (one value per call, no caching).
    double next_gaussian() {
        double u1 = next_double();
        double u2 = next_double();
        if (u1 < 1e-300) u1 = 1e-300;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }
};

inline uint64_t mix_seed(uint64_t a, uint64_t b, uint64_t c = 0) {
    Rng r(a ^ (b * 0x9e3779b97f4a7c15ULL) ^ (c * 0xd1b54a32d192ed03ULL));
    return r.next_u64();
}

}  // namespace uncap
