#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace contproto {

// Deterministic random source used everywhere (initialization, dropout,
// shuffling, synthetic data). The engine is std::mt19937_64, whose output
// sequence is pinned by the C++ standard; all conversions to doubles and
// bounded integers are done by hand below because the standard library
// distributions are implementation-defined. Identical seeds therefore give
// identical draw sequences on every platform.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : seed_(seed), engine_(splitmix64(seed)) {}

    std::uint64_t seed() const { return seed_; }

    std::uint64_t next_u64() { return engine_(); }

    // Uniform in [0, 1) with 53 random bits.
    double next_double() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }

    // Standard normal via Box-Muller; two fresh uniforms per call, no caching,
    // so the draw count per call is fixed.
    double normal() {
        double u1 = next_double();
        double u2 = next_double();
        // 1 - u1 keeps the log argument in (0, 1].
        return std::sqrt(-2.0 * std::log(1.0 - u1)) * std::cos(2.0 * M_PI * u2);
    }

    bool bernoulli(double p) { return next_double() < p; }

    // Uniform integer in [0, n) by rejection, unbiased.
    std::uint64_t next_below(std::uint64_t n) {
        if (n == 0) return 0;
        std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        std::uint64_t x;
        do {
            x = next_u64();
        } while (x >= limit);
        return x % n;
    }

    // Fisher-Yates.
    template <typename T>
    void shuffle(std::vector<T>& v) {
        if (v.size() < 2) return;
        for (std::size_t i = v.size() - 1; i > 0; --i) {
            std::size_t j = static_cast<std::size_t>(next_below(i + 1));
            std::swap(v[i], v[j]);
        }
    }

    // Independent substream keyed on the original seed, not the current
    // engine state, so forks commute with draw order.
    Rng fork(std::uint64_t tag) const {
        return Rng(splitmix64(seed_ ^ (0x9e3779b97f4a7c15ULL * (tag + 1))));
    }

    static std::uint64_t splitmix64(std::uint64_t x) {
        x += 0x9e3779b97f4a7c15ULL;
        x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
        x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
        return x ^ (x >> 31);
    }

private:
    std::uint64_t seed_;
    std::mt19937_64 engine_;
};

} // namespace contproto
