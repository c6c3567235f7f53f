#pragma once

#include <cstdint>
#include <random>

#include "normlab/tensor.hpp"

namespace normlab {

using Rng = std::mt19937_64;

/// Independent child seed for sub-task `index` of a run seeded with `root`
/// (splitmix64 finaliser over root and index).
std::uint64_t split_seed(std::uint64_t root, std::uint64_t index);

/// Entries i.i.d. N(0, sd^2).
Tensor randn(Shape shape, Rng& rng, double sd = 1.0);

}  // namespace normlab
