#pragma once

#include <cstdint>
#include <string_view>

namespace verhallu {

// SplitMix64 (Steele, Lea, Flood 2014). Every random stream in the project is
// drawn from this generator so outputs are identical across platforms and
// standard libraries.
class SplitMix64 {
public:
    explicit constexpr SplitMix64(uint64_t seed) : state_(seed) {}

    constexpr uint64_t next() {
        uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    // uniform in [0, 1) with 53 random bits
    double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // uniform in [0, n); n > 0
    uint64_t below(uint64_t n) { return static_cast<uint64_t>(uniform() * static_cast<double>(n)); }

private:
    uint64_t state_;
};

// FNV-1a, used to derive per-item seeds and token ids from strings.
constexpr uint64_t fnv1a(std::string_view s, uint64_t h = 0xcbf29ce484222325ULL) {
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

// Combines a base seed with a string key into an independent stream seed.
inline uint64_t derive_seed(uint64_t seed, std::string_view key) {
    SplitMix64 mix(seed ^ fnv1a(key));
    return mix.next();
}

} // namespace verhallu
