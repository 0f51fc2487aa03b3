#pragma once

#include <cstdint>
#include <random>

namespace esnuq {

using Rng = std::mt19937_64;

// splitmix64 finalizer. Decorrelates nearby seed values.
inline std::uint64_t mix_seed(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// Sub-seed for stream `stream` of a master seed. All seed derivation in the
// project goes through this one function so runs are reproducible from a
// single master seed.
inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream) {
    return mix_seed(master ^ mix_seed(stream));
}

inline Rng make_rng(std::uint64_t seed) { return Rng(seed); }

} // namespace esnuq
