#pragma once

#include <cstdint>
#include <random>
#include <string>

namespace dgm {

/// The one engine used everywhere. Every stochastic routine takes a
/// caller-owned reference so runs are reproducible from a single seed.
using Rng = std::mt19937_64;

/// Derives an independent seed for a named sub-stream (splitmix64 mixing).
std::uint64_t split_seed(std::uint64_t seed, std::uint64_t stream);

inline Rng make_rng(std::uint64_t seed, std::uint64_t stream = 0) {
  return Rng(split_seed(seed, stream));
}

std::string serialize_rng(const Rng& rng);
Rng deserialize_rng(const std::string& state);

}  // namespace dgm
