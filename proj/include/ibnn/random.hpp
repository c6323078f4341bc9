#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace ibnn {

using Rng = std::mt19937_64;

namespace detail {
inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}
}  // namespace detail

// Mixes a base seed with salts into an independent stream seed. Used to give
// every (step, component, sample) its own reproducible RNG.
inline std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint64_t> salts) {
    std::uint64_t h = detail::splitmix64(base);
    for (std::uint64_t s : salts) {
        h = detail::splitmix64(h ^ detail::splitmix64(s));
    }
    return h;
}

inline Rng make_rng(std::uint64_t base, std::initializer_list<std::uint64_t> salts = {}) {
    return Rng(derive_seed(base, salts));
}

}  // namespace ibnn
