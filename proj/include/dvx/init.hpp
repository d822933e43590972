// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <random>

#include "dvx/tensor.hpp"

namespace dvx {

/// He-normal fill for conv/linear weights feeding ReLU paths.
inline void fill_kaiming(Tensor& t, int fan_in, std::mt19937_64& rng) {
    std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / fan_in));
    for (double& v : t.data) v = dist(rng);
}

/// Xavier-uniform fill for attention projections and plain linear maps.
inline void fill_xavier(Tensor& t, int fan_in, int fan_out, std::mt19937_64& rng) {
    const double bound = std::sqrt(6.0 / (fan_in + fan_out));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (double& v : t.data) v = dist(rng);
}

/// Deterministic sub-stream derivation so unrelated parameter groups do not
/// perturb each other when modules are toggled.
inline std::uint64_t substream(std::uint64_t seed, std::uint64_t salt) {
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ull * (salt + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

}  // namespace dvx
