#pragma once

#include <amlora/tensor.hpp>

#include <cstdint>
#include <initializer_list>
#include <random>

namespace amlora {

using Rng = std::mt19937_64;

/// splitmix64 finalizer; mixes a seed with stream tags into an independent sub-seed.
std::uint64_t mix_seed(std::uint64_t seed, std::initializer_list<std::uint64_t> tags);

Tensor gaussian(Shape shape, double stddev, Rng &rng);
Tensor gaussian(Shape shape, double stddev, std::uint64_t seed);

} // namespace amlora
