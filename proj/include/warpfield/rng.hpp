#pragma once

#include <cstdint>
#include <random>

namespace warpfield {

// Uniform doubles drawn directly from the engine's bits: identical sequences
// on every platform, unlike std::uniform_real_distribution.
inline double uniform01(std::mt19937_64& g) {
    return static_cast<double>(g() >> 11) * 0x1.0p-53;
}

inline double uniform(std::mt19937_64& g, double lo, double hi) {
    return lo + (hi - lo) * uniform01(g);
}

}  // namespace warpfield
