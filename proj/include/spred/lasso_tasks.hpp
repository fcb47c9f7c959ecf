#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "spred/oracles.hpp"
#include "spred/train.hpp"

namespace spred {

struct LassoInstance {
  oracles::LassoProblem problem;
  Tensor w_true;
  Tensor closed_form;  // oracle solution at problem.kappa
};

// X is a random orthonormal d x d matrix; w_true has round(true_sparsity * d) zeros
// and entries of magnitude 0.5 + |N(0, 1)| with random signs elsewhere; y = X w_true + noise.
LassoInstance gen_orthonormal_lasso(std::size_t d, double true_sparsity, double noise_std, std::uint64_t seed,
                                    double kappa = 0.0);

// Gaussian design with entries N(0, 1/N) and k_true planted coefficients.
LassoInstance gen_random_lasso(std::size_t n, std::size_t d, std::size_t k_true, double noise_std, std::uint64_t seed,
                               double kappa = 0.0);

// `count` kappas from 0 (dense) to just past max |X^T y| (all zero), each kept
// away from every |(X^T y)_i|.
std::vector<double> orthonormal_kappa_grid(const oracles::LassoProblem& p, std::size_t count);

SpredModel lasso_model(const oracles::LassoProblem& p, const TrainConfig& cfg);

// Spred on ||y - X V||^2 + kappa (||U||^2 + ||W||^2), V = U (.) W.
SolveReport run_spred_lasso(const oracles::LassoProblem& p, const TrainConfig& cfg);
// Subgradient descent directly on ||y - X w||^2 + 2 kappa ||w||_1.
SolveReport run_naive_l1_lasso(const oracles::LassoProblem& p, const TrainConfig& cfg);

// Adds oracle_objective, oracle_linf, support_mismatch and relative_objective_gap.
// Orthonormal designs use the closed form, others coordinate descent.
void compare_with_oracle(SolveReport& report, const oracles::LassoProblem& p, const std::string& param = "w");

// Fraction of entries that are exactly zero, with no thresholding.
double exact_zero_rate(const Tensor& w);

enum class BenchSolver { spred, coordinate_descent, ista };
BenchSolver parse_bench_solver(std::string_view name);
std::string_view to_string(BenchSolver s);

struct BenchRow {
  std::string solver;
  std::size_t dimension = 0;
  double milestone = 0.0;  // fraction of the converged zero rate
  double seconds = 0.0;
  double objective = 0.0;
  std::size_t iterations = 0;
  bool censored = false;
};

struct BenchOptions {
  std::size_t samples = 200;
  std::size_t k_true = 20;
  double noise_std = 0.1;
  // kappa = kappa_fraction * max |X^T y|.
  double kappa_fraction = 0.1;
  double budget_seconds = 120.0;
  double oracle_tol = 1e-9;
  TrainConfig spred;
  std::uint64_t seed = 0;
};

// Wall clock for each solver and dimension to reach 75%, 90% and 100% of its
// converged zero rate. Iterate objectives are lasso objectives at the milestone.
std::vector<BenchRow> bench_scaling(const std::vector<std::size_t>& dims, const std::vector<BenchSolver>& solvers,
                                    const BenchOptions& options);
std::string bench_csv(const std::vector<BenchRow>& rows);

}  // namespace spred
