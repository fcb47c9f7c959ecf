#pragma once

#include "spred/random.hpp"
#include "spred/tensor.hpp"

namespace spred::linalg {

// Q factor of the QR decomposition of an n x n Gaussian matrix.
Tensor random_orthonormal(std::size_t n, Rng& rng);

// argmin_w ||y - X w||_2 for X[N x d], y[N]; minimum-norm when rank deficient.
Tensor least_squares(const Tensor& X, const Tensor& y);

// ||X^T X - I||_inf (max absolute entry).
double orthonormality_defect(const Tensor& X);

std::size_t rank(const Tensor& X, double tol = 1e-10);

}  // namespace spred::linalg
