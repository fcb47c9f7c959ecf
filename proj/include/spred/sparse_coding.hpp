#pragma once

#include <cstdint>

#include "spred/train.hpp"

namespace spred {

struct SparseCodingConfig {
  // Optimizer, learning rate, batch size (columns), seed and thresholds for the code factors.
  TrainConfig train;
  std::size_t k = 64;
  double kappa = 0.05;
  std::size_t epochs = 60;
  std::size_t steps_per_batch = 10;
  std::size_t dictionary_steps = 10;  // L-BFGS iterations on B after each batch
  // Rescale each row of W to unit norm after an epoch, moving the scale into U.
  bool normalize_rows = false;
  const Tensor* initial_dictionary = nullptr;

  void validate() const;
};

struct SparseCodingRun {
  Tensor B;  // [d0 x k], unit-norm columns
  Tensor U;  // [k x N]
  Tensor W;  // [k x N]
  Tensor S;  // U (.) W thresholded at the tight level
  SolveReport report;
};

// ||X - B (U (.) W)||^2 + kappa (||U||^2 + ||W||^2) over minibatches of columns.
// Each batch gets `steps_per_batch` first-order steps on its slice of the factors,
// then L-BFGS on B; B is parametrized through its column directions so the
// renormalization after each update leaves the objective unchanged.
SparseCodingRun run_sparse_coding(const Tensor& X, const SparseCodingConfig& cfg);

// ||X - B (U (.) W)||^2 + kappa (||U||^2 + ||W||^2) for a batch of columns.
Var code_objective(Graph& g, const Tensor& X, const Tensor& B, const Var& U, const Var& W, double kappa);
// ||X - B' S||^2 with B' the column-normalized B.
Var dictionary_objective(Graph& g, const Tensor& X, const Var& B, const Tensor& S);

// Random N(0, 1) dictionary with unit-norm columns.
Tensor random_dictionary(std::size_t d0, std::size_t k, std::uint64_t seed);

}  // namespace spred
