#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace fieldgen {

inline uint64_t splitmix64(uint64_t& state) {
    uint64_t z = (state += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

// Seeded random stream. Uniform/normal conversions are spelled out explicitly
// so results are identical across standard library versions.
class Rng {
public:
    explicit Rng(uint64_t seed) : gen_(mix_seed(seed)) {}

    // Independent stream keyed by (seed, a, b, c), e.g. (run seed, step, item).
    static Rng derive(uint64_t seed, uint64_t a, uint64_t b = 0, uint64_t c = 0) {
        uint64_t s = seed;
        uint64_t h = splitmix64(s);
        s ^= a + 0x632be59bd9b4e019ull;
        h ^= splitmix64(s);
        s ^= b + 0x9e3779b97f4a7c15ull;
        h ^= splitmix64(s);
        s ^= c + 0xd6e8feb86659fd93ull;
        h ^= splitmix64(s);
        return Rng(h);
    }

    uint64_t u64() { return gen_(); }

    // [0, 1)
    double uniform() { return static_cast<double>(u64() >> 11) * 0x1.0p-53; }

    // (0, 1), never exactly 0 or 1
    double uniform_pos() { return (static_cast<double>(u64() >> 11) + 0.5) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // [0, n)
    int uniform_int(int n) { return static_cast<int>(u64() % static_cast<uint64_t>(n)); }

    // Standard normal via Box-Muller; second value cached.
    double normal() {
        if (has_cache_) {
            has_cache_ = false;
            return cache_;
        }
        double u1 = uniform_pos();
        double u2 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 6.283185307179586476925286766559 * u2;
        cache_ = r * std::sin(a);
        has_cache_ = true;
        return r * std::cos(a);
    }

private:
    static uint64_t mix_seed(uint64_t seed) {
        uint64_t s = seed;
        return splitmix64(s);
    }

    std::mt19937_64 gen_;
    double cache_ = 0.0;
    bool has_cache_ = false;
};

}  // namespace fieldgen
