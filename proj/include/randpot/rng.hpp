#pragma once

// Counter-based splittable random streams.
//
// Every stream is identified by (master seed, purpose tag, index); draws are
// pure functions of that identity and a running counter, so independently
// derived streams can be consumed in any order -- including from worker
// threads -- without perturbing each other.  Derivation is cheap enough to
// create one stream per task.

#include <cstdint>
#include <cmath>
#include <string_view>

#include "randpot/vec.hpp"

namespace randpot {

namespace detail {

// SplitMix64 output function (Steele/Lea/Flood mixer); passes BigCrush when
// driven by a Weyl sequence, which is exactly how we drive it.
inline std::uint64_t mix64(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

inline std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 0xCBF29CE484222325ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001B3ull;
    }
    return h;
}

}  // namespace detail

class RngStream {
public:
    RngStream() : key_(0), ctr_(0) {}
    explicit RngStream(std::uint64_t master_seed) : key_(scramble(master_seed)), ctr_(0) {}

    // Derive an independent child stream.  Children with distinct
    // (tag, index) pairs never share draws with each other or the parent.
    RngStream derive(std::string_view tag, std::uint64_t index = 0) const {
        std::uint64_t k = key_;
        k = detail::mix64(k + 0x9E3779B97F4A7C15ull * detail::fnv1a(tag));
        k = detail::mix64(k + 0x9E3779B97F4A7C15ull * (index + 1));
        RngStream child;
        child.key_ = k;
        return child;
    }

    std::uint64_t next_u64() { return detail::mix64(key_ + 0x9E3779B97F4A7C15ull * ++ctr_); }

    // Uniform in [0, 1) with 53 random bits.
    double uniform01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double a, double b) { return a + (b - a) * uniform01(); }

    // Integer in [0, n), n >= 1, by rejection-free 128-bit multiply.
    std::uint64_t uniform_index(std::uint64_t n) {
        return static_cast<std::uint64_t>(
            (static_cast<unsigned __int128>(next_u64()) * n) >> 64);
    }

    // Standard normal via Box-Muller (second value cached).
    double normal() {
        if (have_cache_) {
            have_cache_ = false;
            return cache_;
        }
        double u1, u2;
        do {
            u1 = uniform01();
        } while (u1 <= 0.0);
        u2 = uniform01();
        double r = std::sqrt(-2.0 * std::log(u1));
        double c = std::cos(6.283185307179586476925286766559 * u2);
        double s = std::sin(6.283185307179586476925286766559 * u2);
        cache_ = r * s;
        have_cache_ = true;
        return r * c;
    }

    // Exact Poisson sampling.  Knuth's product method for small means; large
    // means split recursively (sum of independent halves is exact).
    std::uint64_t poisson(double lambda) {
        if (lambda < 0.0) return 0;
        std::uint64_t total = 0;
        while (lambda > 32.0) {
            // Poisson(l) = Poisson(l/2) + Poisson(l/2), independent.
            total += poisson_small(lambda / 2.0);
            lambda /= 2.0;
        }
        return total + poisson_small(lambda);
    }

    // Uniform point in the d-ball of given radius: normal direction plus a
    // u^(1/d) radial law.  Works in any dimension without rejection.
    Vec uniform_in_ball(int d, double radius) {
        Vec x(d);
        double n2;
        do {
            for (int i = 0; i < d; ++i) x[i] = normal();
            n2 = x.norm2();
        } while (n2 == 0.0);
        double r = radius * std::pow(uniform01(), 1.0 / d);
        return (r / std::sqrt(n2)) * x;
    }

    Vec uniform_in_box(const Vec& lo, const Vec& hi) {
        Vec x(lo.dim());
        for (int i = 0; i < lo.dim(); ++i) x[i] = uniform(lo[i], hi[i]);
        return x;
    }

    // Index sampled from unnormalised nonnegative weights.
    int categorical(const double* w, int n) {
        double tot = 0.0;
        for (int i = 0; i < n; ++i) tot += w[i];
        double u = uniform01() * tot;
        double acc = 0.0;
        for (int i = 0; i < n; ++i) {
            acc += w[i];
            if (u < acc) return i;
        }
        return n - 1;
    }

private:
    static std::uint64_t scramble(std::uint64_t s) {
        return detail::mix64(s + 0x9E3779B97F4A7C15ull);
    }

    std::uint64_t poisson_small(double lambda) {
        double limit = std::exp(-lambda);
        double prod = 1.0;
        std::uint64_t n = 0;
        for (;;) {
            prod *= uniform01();
            if (prod <= limit) return n;
            ++n;
        }
    }

    std::uint64_t key_;
    std::uint64_t ctr_;
    double cache_ = 0.0;
    bool have_cache_ = false;
};

}  // namespace randpot
