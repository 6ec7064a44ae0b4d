#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace mbf {

using Rng = std::mt19937_64;

std::uint64_t splitmix64(std::uint64_t x);

// Derives an independent generator for a named purpose ("fit", "train",
// "generate", ...) from one user seed, so commands stay reproducible when
// other streams change how many numbers they draw.
Rng make_stream(std::uint64_t seed, std::string_view name);

}  // namespace mbf
