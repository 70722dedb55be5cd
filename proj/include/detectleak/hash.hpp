#pragma once

#include <cstdint>
#include <string>
#include <string_view>

namespace detectleak {

// FNV-1a over raw bytes followed by the murmur3 64-bit finalizer. Stable
// across platforms and runs, which the persisted artifacts rely on.

constexpr std::uint64_t kFnvOffset = 0xcbf29ce484222325ULL;
constexpr std::uint64_t kFnvPrime = 0x100000001b3ULL;

constexpr std::uint64_t fnv1a_update(std::uint64_t h, std::string_view bytes) noexcept {
    for (unsigned char c : bytes) {
        h ^= c;
        h *= kFnvPrime;
    }
    return h;
}

constexpr std::uint64_t fnv1a_update(std::uint64_t h, std::uint8_t byte) noexcept {
    h ^= byte;
    h *= kFnvPrime;
    return h;
}

constexpr std::uint64_t mix64(std::uint64_t x) noexcept {
    x ^= x >> 33;
    x *= 0xff51afd7ed558ccdULL;
    x ^= x >> 33;
    x *= 0xc4ceb9fe1a85ec53ULL;
    x ^= x >> 33;
    return x;
}

constexpr std::uint64_t hash_bytes(std::string_view bytes) noexcept {
    return mix64(fnv1a_update(kFnvOffset, bytes));
}

constexpr std::uint64_t hash_combine(std::uint64_t seed, std::uint64_t value) noexcept {
    return mix64(seed ^ (value + 0x9e3779b97f4a7c15ULL + (seed << 6) + (seed >> 2)));
}

/// 16 lowercase hex digits.
std::string to_hex(std::uint64_t value);

}  // namespace detectleak
