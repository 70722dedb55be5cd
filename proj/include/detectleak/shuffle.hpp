#pragma once

#include <cstdint>
#include <random>
#include <utility>
#include <vector>

namespace detectleak {

/// Fisher-Yates driven directly by mt19937_64 output. Unlike std::shuffle the
/// resulting order is identical across standard library implementations.
template <typename T>
void portable_shuffle(std::vector<T>& items, std::mt19937_64& rng) {
    for (std::size_t i = items.size(); i > 1; --i) {
        const std::size_t j = static_cast<std::size_t>(rng() % i);
        std::swap(items[i - 1], items[j]);
    }
}

}  // namespace detectleak
