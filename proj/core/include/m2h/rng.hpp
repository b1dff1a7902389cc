#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace m2h {

using Rng = std::mt19937_64;

/// Derives an independent stream seed from a base seed and a list of tags.
/// Used everywhere a component needs its own generator so that adding or
/// removing one component never shifts the random stream of another.
std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint64_t> tags);

inline Rng make_rng(std::uint64_t base, std::initializer_list<std::uint64_t> tags) {
  return Rng(derive_seed(base, tags));
}

/// Uniform draw in [0, 1).
inline double uniform01(Rng& rng) {
  return std::uniform_real_distribution<double>(0.0, 1.0)(rng);
}

}  // namespace m2h
