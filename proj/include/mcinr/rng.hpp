#pragma once

#include <cstdint>
#include <random>

namespace mcinr {

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// Independent per-task streams derived from (seed, salt...), so results do
// not depend on which worker runs a job or in what order.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0,
                                 std::uint64_t c = 0) {
    std::uint64_t h = splitmix64(seed);
    h = splitmix64(h ^ a);
    h = splitmix64(h ^ b);
    h = splitmix64(h ^ c);
    return h;
}

inline std::mt19937 make_rng(std::uint64_t seed) {
    return std::mt19937(static_cast<std::uint32_t>(seed ^ (seed >> 32)));
}

}  // namespace mcinr
