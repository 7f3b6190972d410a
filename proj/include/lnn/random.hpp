#pragma once

#include <cstdint>
#include <random>

#include "lnn/tensor.hpp"

namespace lnn {

using Rng = std::mt19937_64;

/// splitmix64 finalizer; derives independent sub-seeds from one experiment seed.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline double uniform(Rng& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

inline Tensor uniform_tensor(Shape shape, double lo, double hi, Rng& rng) {
  std::vector<double> d(numel(shape));
  std::uniform_real_distribution<double> dist(lo, hi);
  for (auto& v : d) v = dist(rng);
  return Tensor(std::move(shape), std::move(d));
}

inline Tensor normal_tensor(Shape shape, double stddev, Rng& rng) {
  std::vector<double> d(numel(shape));
  std::normal_distribution<double> dist(0.0, stddev);
  for (auto& v : d) v = dist(rng);
  return Tensor(std::move(shape), std::move(d));
}

}  // namespace lnn
