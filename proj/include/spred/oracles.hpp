#pragma once

#include <cstdint>
#include <functional>
#include <stdexcept>
#include <vector>

#include "spred/tensor.hpp"

namespace spred::oracles {

// ||y - X w||^2 + 2 kappa ||w||_1. A matrix y[N x m] is solved column by column.
struct LassoProblem {
  Tensor X;  // [N x d]
  Tensor y;  // [N] or [N x m]
  double kappa = 0.0;

  void validate() const;
  std::size_t samples() const { return X.rows(); }
  std::size_t features() const { return X.cols(); }
  std::size_t outputs() const { return y.rank() == 1 ? 1 : y.cols(); }
};

// ||y - X w||^2 + 2 kappa sum_g ||w_g||_2 over a partition of the coordinates.
struct GroupLassoProblem {
  LassoProblem lasso;
  std::vector<std::vector<std::size_t>> groups;

  void validate() const;
};

class NonOrthonormalDesign : public std::invalid_argument {
 public:
  NonOrthonormalDesign(double defect);
  double defect;
};

struct OracleResult {
  Tensor w;
  std::size_t iterations = 0;
  bool converged = false;
};

// sign(c) max(|c| - kappa, 0): the minimizer of (w - c)^2 + 2 kappa |w|.
double soft_threshold(double c, double kappa);
Tensor soft_threshold(const Tensor& c, double kappa);
// v max(1 - kappa / ||v||, 0).
Tensor group_soft_threshold(const Tensor& v, double kappa);

double lasso_objective(const LassoProblem& p, const Tensor& w);
double group_lasso_objective(const GroupLassoProblem& p, const Tensor& w);
// Largest violation of the lasso optimality conditions (all outputs).
double lasso_kkt_residual(const LassoProblem& p, const Tensor& w);
double group_lasso_kkt_residual(const GroupLassoProblem& p, const Tensor& w);

// Called after every sweep (coordinate descent) or iteration (proximal) with the current iterate.
using IterationHook = std::function<void(std::size_t iteration, const Tensor& w)>;

// Requires X^T X = I within 1e-8; w_i = soft_threshold((X^T y)_i, kappa).
Tensor closed_form_lasso_orthonormal(const LassoProblem& p);

// Cyclic coordinate descent until the largest coordinate change drops below tol.
OracleResult coordinate_descent_lasso(const LassoProblem& p, double tol, std::size_t max_sweeps = 100000,
                                      const IterationHook& hook = {});

enum class ProxVariant { ista, fista };

// Largest eigenvalue of X^T X by power iteration.
double gram_spectral_norm(const Tensor& X, std::size_t iters = 500, double tol = 1e-12);

// Proximal gradient with step 1/L, L = 2 lambda_max(X^T X); stops when the
// objective changes by less than tol (relative).
OracleResult ista_fista_lasso(const LassoProblem& p, ProxVariant variant, double tol,
                              std::size_t max_iter = 200000, const Tensor* start = nullptr,
                              const IterationHook& hook = {});

// One proximal-gradient step w - step * grad, soft-thresholded at 2 kappa step.
Tensor ista_step(const LassoProblem& p, const Tensor& w, double step);

// FISTA with block soft thresholding and function-value restarts.
OracleResult group_lasso_prox(const GroupLassoProblem& p, double tol, std::size_t max_iter = 200000);

struct SparseCodingResult {
  Tensor B;  // [d0 x k], unit-norm columns
  Tensor S;  // [k x N]
  std::vector<double> objective_trace;
  std::size_t iterations = 0;
  bool hit_iteration_cap = false;
};

// ||X - B S||^2 + 2 kappa ||S||_1.
double sparse_coding_objective(const Tensor& X, const Tensor& B, const Tensor& S, double kappa);
void normalize_columns(Tensor& B);

struct AlternatingOptions {
  std::size_t outer_iters = 50;
  std::size_t code_iters = 100;
  std::size_t dictionary_iters = 20;
  double tol = 1e-9;
  std::uint64_t seed = 0;
  const Tensor* initial_dictionary = nullptr;
};

// Alternates lasso solves for the codes with projected gradient steps on B.
SparseCodingResult alternating_sparse_coding(const Tensor& X, std::size_t k, double kappa,
                                             const AlternatingOptions& options = {});

}  // namespace spred::oracles
