#pragma once

#include <cmath>
#include <cstdint>

namespace freezetst {

/// Deterministic 64-bit generator (splitmix64). Every random choice in the
/// library flows through this type so that a run is reproducible from a single
/// root seed on any platform.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next_u64() {
        std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    /// Uniform double in [0, 1) with 53-bit resolution.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    /// Uniform double in [lo, hi).
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Standard normal via Box-Muller. No cached second value: each call
    /// consumes exactly two uniforms, which keeps call sites stream-stable.
    double normal() {
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    /// Integer in [0, n).
    std::uint64_t below(std::uint64_t n) { return next_u64() % n; }

private:
    std::uint64_t state_;
};

/// Named sub-streams derived from the root seed. Adding a stream is free;
/// reordering existing ones would silently change every seeded run.
enum class Stream : std::uint64_t {
    data = 1,
    init = 2,
    shuffle = 3,
    probes = 4,
    spectral = 5,
    reservoir = 6,
    analysis = 7,
};

/// Derive an independent child seed from a root seed and a stream tag.
/// One splitmix64 scramble of (root, tag) keeps children decorrelated even
/// for adjacent tags.
inline std::uint64_t derive_seed(std::uint64_t root, std::uint64_t stream) {
    Rng mix(root ^ (0x632be59bd9b4e019ull * (stream + 1)));
    return mix.next_u64();
}

inline std::uint64_t derive_seed(std::uint64_t root, Stream stream) {
    return derive_seed(root, static_cast<std::uint64_t>(stream));
}

}  // namespace freezetst
