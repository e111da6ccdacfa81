#pragma once

// Reproducible random streams.
//
// All randomness comes from std::mt19937_64, whose output sequence is fixed by
// the C++ standard. Distributions are implemented here rather than taken from
// <random> because the standard leaves their algorithms to the library vendor.
//
// Sub-streams are derived from (seed, purpose tag, round, client) by folding
// each component through SplitMix64, so the order in which clients run can
// never change the numbers any of them sees.

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <string_view>
#include <vector>

namespace fedtad {

inline constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

inline constexpr std::uint64_t fnv1a64(std::string_view s) noexcept {
    std::uint64_t h = 0xCBF29CE484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001B3ULL;
    }
    return h;
}

inline constexpr std::uint64_t derive_seed(std::uint64_t seed, std::string_view tag,
                                           std::uint64_t round = 0,
                                           std::uint64_t client = 0) noexcept {
    std::uint64_t h = splitmix64(seed);
    h = splitmix64(h ^ fnv1a64(tag));
    h = splitmix64(h ^ round);
    h = splitmix64(h ^ client);
    return h;
}

class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    Rng(std::uint64_t seed, std::string_view tag, std::uint64_t round = 0,
        std::uint64_t client = 0)
        : engine_(derive_seed(seed, tag, round, client)) {}

    std::uint64_t next_u64() { return engine_(); }

    // Uniform on [0, 1) with 53 bits of resolution.
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    // Uniform on (0, 1]; safe to take a logarithm of.
    double uniform_open() { return (static_cast<double>(engine_() >> 11) + 1.0) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer on [0, n) by rejection, no modulo bias.
    std::uint64_t below(std::uint64_t n) {
        const std::uint64_t limit = (~std::uint64_t{0}) - ((~std::uint64_t{0}) % n);
        std::uint64_t x;
        do {
            x = engine_();
        } while (x >= limit);
        return x % n;
    }

    // Box-Muller; the spare value is cached.
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        const double u1 = uniform_open();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 2.0 * std::numbers::pi * u2;
        spare_ = r * std::sin(theta);
        has_spare_ = true;
        return r * std::cos(theta);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    // Marsaglia-Tsang; shapes below one use the Gamma(a+1)·U^(1/a) boost.
    double gamma(double shape) {
        if (shape < 1.0) {
            const double g = gamma(shape + 1.0);
            return g * std::pow(uniform_open(), 1.0 / shape);
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
            const double u = uniform_open();
            if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
            if (std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
        }
    }

    // Symmetric Dirichlet(concentration · 1_k) via normalized Gamma draws.
    std::vector<double> dirichlet(std::size_t k, double concentration) {
        std::vector<double> p(k);
        double total = 0.0;
        for (auto& x : p) {
            x = gamma(concentration);
            total += x;
        }
        if (total <= 0.0) {
            // All draws underflowed (tiny concentration); fall back to a one-hot.
            std::fill(p.begin(), p.end(), 0.0);
            p[below(k)] = 1.0;
            return p;
        }
        for (auto& x : p) x /= total;
        return p;
    }

    // Fisher-Yates.
    template <class T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            const std::size_t j = below(i);
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    std::mt19937_64 engine_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

}  // namespace fedtad
