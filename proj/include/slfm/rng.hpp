#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <string_view>

namespace slfm {

// Counter-based deterministic generator. Each (seed, label) pair names an
// independent stream; the only mutable state is a draw counter, so a stream
// can be checkpointed and resumed by storing a single integer.
class Rng {
public:
    Rng(uint64_t seed, std::string_view label)
        : key_(mix(seed ^ hash_label(label))), counter_(0) {}

    // Restore a stream at an exact position.
    Rng(uint64_t seed, std::string_view label, uint64_t counter)
        : key_(mix(seed ^ hash_label(label))), counter_(counter) {}

    uint64_t counter() const { return counter_; }

    uint64_t next_u64() { return mix(key_ + 0x9e3779b97f4a7c15ULL * ++counter_); }

    // Uniform on [0, 1).
    double uniform() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Integer in [0, n).
    uint64_t below(uint64_t n) { return next_u64() % n; }

    // Standard normal via Box-Muller. Always consumes exactly two draws so the
    // stream position fully determines the value (no cached spare).
    double normal() {
        double u1 = uniform();
        if (u1 <= 0.0) u1 = 0x1.0p-53;
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
    }

private:
    static uint64_t mix(uint64_t z) {
        z += 0x9e3779b97f4a7c15ULL;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    static uint64_t hash_label(std::string_view label) {
        uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
        for (char c : label) {
            h ^= static_cast<unsigned char>(c);
            h *= 0x100000001b3ULL;
        }
        return h;
    }

    uint64_t key_;
    uint64_t counter_;
};

}  // namespace slfm
