#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace ampcs {

using Engine = std::mt19937_64;

/// SplitMix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t x) noexcept {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// Deterministic child seed from a master seed and a path of indices,
/// e.g. derive_seed(master, {delta_index, rho_index, instance}).
constexpr std::uint64_t derive_seed(std::uint64_t master, std::initializer_list<std::uint64_t> path) noexcept {
    std::uint64_t h = mix64(master);
    for (auto k : path) {
        h = mix64(h ^ mix64(k + 0x632be59bd9b4e019ULL));
    }
    return h;
}

// Stream tags used when a single seed feeds several independent draws.
namespace stream {
inline constexpr std::uint64_t matrix = 1;
inline constexpr std::uint64_t signal = 2;
inline constexpr std::uint64_t noise = 3;
inline constexpr std::uint64_t rows = 4;
} // namespace stream

} // namespace ampcs
