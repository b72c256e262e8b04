#pragma once

#include <cmath>
#include <cstdint>

#include "embinv/tensor.hpp"

namespace embinv {

inline uint64_t splitmix64(uint64_t& x) {
    uint64_t z = (x += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

// Derives an independent seed for sub-stream k of a base seed. Pure function,
// so job seeding does not depend on evaluation order.
inline uint64_t derive_seed(uint64_t base, uint64_t stream) {
    uint64_t x = base ^ (0x9e3779b97f4a7c15ULL * (stream + 1));
    return splitmix64(x);
}

// Deterministic seeded generator: xoshiro256++ (Blackman & Vigna), state
// expanded from the seed with splitmix64. The algorithm is frozen; the same
// seed yields the same stream on every platform.
class Rng {
public:
    explicit Rng(uint64_t seed) {
        uint64_t x = seed;
        for (auto& s : s_) s = splitmix64(x);
    }

    uint64_t next_u64() {
        const uint64_t result = rotl(s_[0] + s_[3], 23) + s_[0];
        const uint64_t t = s_[1] << 17;
        s_[2] ^= s_[0];
        s_[3] ^= s_[1];
        s_[1] ^= s_[2];
        s_[0] ^= s_[3];
        s_[2] ^= t;
        s_[3] = rotl(s_[3], 45);
        return result;
    }

    // uniform in [0,1), 53-bit resolution
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // standard normal via Box-Muller; second deviate cached
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        double u2 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(a);
        has_spare_ = true;
        return r * std::cos(a);
    }

    double normal(double mean, double sd) { return mean + sd * normal(); }

    Tensor uniform_tensor(std::vector<int> dims, double lo, double hi) {
        Tensor t(std::move(dims));
        for (size_t i = 0; i < t.size(); ++i) t[i] = uniform(lo, hi);
        return t;
    }

    Tensor normal_tensor(std::vector<int> dims, double mean = 0.0, double sd = 1.0) {
        Tensor t(std::move(dims));
        for (size_t i = 0; i < t.size(); ++i) t[i] = normal(mean, sd);
        return t;
    }

private:
    static uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

    uint64_t s_[4];
    bool has_spare_ = false;
    double spare_ = 0.0;
};

inline Tensor xavier_uniform(Rng& rng, std::vector<int> dims, int fan_in, int fan_out) {
    const double limit = std::sqrt(6.0 / (static_cast<double>(fan_in) + fan_out));
    return rng.uniform_tensor(std::move(dims), -limit, limit);
}

}  // namespace embinv
