#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string_view>

namespace sbp::rng {

// splitmix64 finalizer; decorrelates nearby seed values.
constexpr std::uint64_t mix(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

constexpr std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (char c : s) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001b3ULL;
    }
    return h;
}

// Every random stream in the toolkit is seeded as
//   derive(user_seed, "<component-name>", index)
// so component seeds stay stable as the code evolves.
constexpr std::uint64_t derive(std::uint64_t base, std::string_view component,
                               std::uint64_t index = 0) {
    return mix(mix(base ^ fnv1a(component)) ^ index);
}

// Seed variant keyed by a set of integers (e.g. the subject subset a fit was
// given), so identical subsets reproduce identical fits regardless of where
// they occur in a protocol.
inline std::uint64_t derive_from_set(std::uint64_t base, std::string_view component,
                                     std::span<const int> sorted_values) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (int v : sorted_values) {
        h ^= static_cast<std::uint64_t>(static_cast<std::uint32_t>(v));
        h *= 0x100000001b3ULL;
    }
    return mix(derive(base, component) ^ h);
}

inline std::mt19937_64 engine(std::uint64_t seed) { return std::mt19937_64(seed); }

}  // namespace sbp::rng
