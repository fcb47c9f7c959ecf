#pragma once

#include <cstdint>
#include <random>

#include "spred/tensor.hpp"

namespace spred {

using Rng = std::mt19937_64;

inline Tensor random_normal(Shape shape, double stddev, Rng& rng) {
  Tensor t(std::move(shape));
  std::normal_distribution<double> dist(0.0, stddev);
  for (auto& v : t.data()) v = dist(rng);
  return t;
}

inline Tensor random_uniform(Shape shape, double lo, double hi, Rng& rng) {
  Tensor t(std::move(shape));
  std::uniform_real_distribution<double> dist(lo, hi);
  for (auto& v : t.data()) v = dist(rng);
  return t;
}

}  // namespace spred
