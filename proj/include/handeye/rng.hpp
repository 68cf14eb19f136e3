// Deterministic RNG used everywhere instead of <random> distributions, whose
// output is not pinned by the standard. Same seed -> same stream, bit for bit.

#pragma once

#include <cmath>
#include <cstdint>

namespace handeye {

// SplitMix64 core step.
inline uint64_t splitmix64(uint64_t& state) {
    uint64_t z = (state += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

class Rng {
  public:
    explicit Rng(uint64_t seed) : state_(seed) {
        // One warm-up draw decorrelates small consecutive seeds.
        (void)splitmix64(state_);
    }

    uint64_t next_u64() { return splitmix64(state_); }

    // Uniform in [0,1) with 53 random bits.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [0,n), rejection-free via 128-bit multiply trick is
    // overkill here; modulo bias at n << 2^64 is far below statistical tests.
    int uniform_int(int n) { return static_cast<int>(next_u64() % static_cast<uint64_t>(n)); }

    // Standard normal via Box-Muller; one value per call, no cached pair.
    double normal() {
        double u1 = uniform();
        double u2 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
    }

    // Independent child stream for (seed, index) pairs: per-trial, per-frame,
    // per-training-seed streams all derive through here.
    static uint64_t derive(uint64_t seed, uint64_t stream) {
        uint64_t s = seed ^ (0x9e3779b97f4a7c15ull * (stream + 1));
        return splitmix64(s);
    }

  private:
    uint64_t state_;
};

}  // namespace handeye
