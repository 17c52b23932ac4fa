#pragma once

#include <cmath>
#include <cstdint>

namespace icm {

// Deterministic, platform-independent random stream (xoshiro256++ seeded via
// splitmix64). std:: distributions are implementation-defined, so all sampling
// goes through this type to keep dataset generation byte-reproducible.
class Rng {
public:
    explicit Rng(std::uint64_t seed) {
        std::uint64_t x = seed;
        for (auto& w : s_) w = splitmix64(x);
    }

    // Independent child stream for (dataset, index)-style keying.
    Rng fork(std::uint64_t a, std::uint64_t b = 0) const {
        std::uint64_t x = s_[0] ^ (0x9e3779b97f4a7c15ULL * (a + 1));
        x ^= rotl(s_[2] + b, 17);
        return Rng(x);
    }

    std::uint64_t next() {
        const std::uint64_t result = rotl(s_[0] + s_[3], 23) + s_[0];
        const std::uint64_t t = s_[1] << 17;
        s_[2] ^= s_[0];
        s_[3] ^= s_[1];
        s_[1] ^= s_[2];
        s_[0] ^= s_[3];
        s_[2] ^= t;
        s_[3] = rotl(s_[3], 45);
        return result;
    }

    // Uniform on [0, 1).
    double uniform01() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

    // Uniform integer on [0, n), n >= 1. Lemire reduction, effectively unbiased.
    std::uint64_t uniform_index(std::uint64_t n) {
        return static_cast<std::uint64_t>(
            (static_cast<unsigned __int128>(next()) * n) >> 64);
    }

    // Uniform integer on [lo, hi] inclusive.
    std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
        return lo + static_cast<std::int64_t>(
                        uniform_index(static_cast<std::uint64_t>(hi - lo + 1)));
    }

    // Standard normal via Box-Muller (cached spare).
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = uniform01();
        while (u1 <= 1e-300) u1 = uniform01();
        const double u2 = uniform01();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(a);
        has_spare_ = true;
        return r * std::cos(a);
    }

    // Fisher-Yates choice of k distinct indices from [0, n).
    template <class OutIt>
    void sample_without_replacement(std::uint64_t n, std::uint64_t k, OutIt out) {
        // n is small everywhere this is used; selection sampling keeps it O(n).
        std::uint64_t chosen = 0;
        for (std::uint64_t i = 0; i < n && chosen < k; ++i) {
            const std::uint64_t remaining = n - i;
            if (uniform_index(remaining) < k - chosen) {
                *out++ = i;
                ++chosen;
            }
        }
    }

private:
    static std::uint64_t rotl(std::uint64_t x, int k) {
        return (x << k) | (x >> (64 - k));
    }
    static std::uint64_t splitmix64(std::uint64_t& x) {
        std::uint64_t z = (x += 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    std::uint64_t s_[4];
    double spare_ = 0.0;
    bool has_spare_ = false;
};

}  // namespace icm
