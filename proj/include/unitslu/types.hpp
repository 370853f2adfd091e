#pragma once

#include <cstdint>
#include <vector>

#include <Eigen/Dense>

namespace unitslu {

/// Frame-level features, one row per 20 ms frame.
using FeatureMatrix = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Discrete unit ids in [0, k).
using UnitSequence = std::vector<int>;

/// Mixes a base seed with a stream index into an independent 64-bit seed.
constexpr std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ull * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

}  // namespace unitslu
