#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "darr/common.hpp"

namespace darr {

// xoshiro256** seeded via splitmix64. Self-contained so that streams are
// reproducible across compilers and standard libraries (std::shuffle and
// std::normal_distribution are implementation-defined).
class Rng {
public:
    explicit Rng(u64 seed) {
        u64 x = seed;
        for (auto& si : s_) {
            x += 0x9e3779b97f4a7c15ull;
            u64 z = x;
            z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
            z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
            si = z ^ (z >> 31);
        }
    }

    u64 next_u64() {
        const u64 result = rotl(s_[1] * 5, 7) * 9;
        const u64 t = s_[1] << 17;
        s_[2] ^= s_[0];
        s_[3] ^= s_[1];
        s_[1] ^= s_[2];
        s_[0] ^= s_[3];
        s_[2] ^= t;
        s_[3] = rotl(s_[3], 45);
        return result;
    }

    // Unbiased integer in [0, bound) by rejection.
    u64 below(u64 bound) {
        require<DomainError>(bound > 0, "Rng::below: bound must be positive");
        const u64 threshold = (0 - bound) % bound;
        for (;;) {
            u64 r = next_u64();
            if (r >= threshold) return r % bound;
        }
    }

    // Uniform in [0, 1) with 53-bit resolution.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Standard normal via Box-Muller (no cached spare; keeps the stream
    // position a pure function of the call count).
    double normal() {
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }

    template <class T>
    void shuffle(std::vector<T>& v) {
        for (u64 i = v.size(); i > 1; --i) {
            const u64 j = below(i);
            std::swap(v[i - 1], v[j]);
        }
    }

    // Derives an independent stream, e.g. one per worker or per case.
    Rng fork(u64 stream_id) {
        return Rng(next_u64() ^ (stream_id * 0x9e3779b97f4a7c15ull + 0x2545f4914f6cdd1dull));
    }

private:
    static u64 rotl(u64 x, int k) { return (x << k) | (x >> (64 - k)); }
    u64 s_[4];
};

// Stable seed derivation for (seed, tag) pairs, e.g. per-case generation seeds.
inline u64 derive_seed(u64 base, u64 tag) {
    u64 z = base ^ (tag * 0x9e3779b97f4a7c15ull + 0xbf58476d1ce4e5b9ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

}  // namespace darr
