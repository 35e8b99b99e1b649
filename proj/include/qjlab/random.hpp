#pragma once

#include <cstdint>
#include <random>

#include "qjlab/common.hpp"

namespace qjlab {

/* splitmix64 step (Vigna). Used as the documented seed-mixing function. */
inline std::uint64_t splitmix64(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9E3779B97F4A7C15ull);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

/* Per-unit seed for parallel work: unit i of a run with base seed b gets
 * derive_seed(b, i). Two splitmix64 steps so that nearby (base, index)
 * pairs land far apart. */
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t index) {
    std::uint64_t s = base;
    std::uint64_t a = splitmix64(s);
    s = a ^ (index + 0x9E3779B97F4A7C15ull);
    std::uint64_t b = splitmix64(s);
    return b ? b : 0x6A09E667F3BCC909ull;
}

/* Deterministic RNG: mt19937_64 engine with hand-rolled output transforms so
 * streams are bit-identical across standard libraries (std distributions are
 * not pinned by the standard). normal() is a 128-layer ziggurat; the
 * Box-Muller path is kept as an independent reference for tests. */
class Rng {
public:
    explicit Rng(std::uint64_t seed = 1) : eng_(seed) {}

    void reseed(std::uint64_t seed) { eng_.seed(seed); }

    std::uint64_t raw() { return eng_(); }

    /* uniform on [0, 1) */
    double uniform01() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

    /* uniform on (0, 1], safe under log() */
    double uniform_pos() { return static_cast<double>((eng_() >> 11) + 1) * 0x1.0p-53; }

    double normal();
    cx normal_pair(); /* two independent N(0,1) draws packed as re/im */

    double normal_boxmuller();

private:
    std::mt19937_64 eng_;
    double bm_cache_ = 0.0;
    bool bm_has_cache_ = false;
};

} // namespace qjlab
