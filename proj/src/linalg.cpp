#include "spred/linalg.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>

namespace spred::linalg {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

RowMat to_eigen(const Tensor& t) {
  const auto rows = static_cast<Eigen::Index>(t.rows());
  const auto cols = static_cast<Eigen::Index>(t.cols());
  return Eigen::Map<const RowMat>(t.data().data(), rows, cols);
}

Tensor from_eigen(const RowMat& m) {
  return Tensor(Shape{static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols())},
                std::vector<double>(m.data(), m.data() + m.size()));
}

}  // namespace

Tensor random_orthonormal(std::size_t n, Rng& rng) {
  const RowMat g = to_eigen(random_normal({n, n}, 1.0, rng));
  Eigen::HouseholderQR<RowMat> qr(g);
  RowMat q = qr.householderQ();
  // Fix column signs so the factorization is unique (diag(R) > 0).
  const RowMat r = qr.matrixQR().triangularView<Eigen::Upper>();
  for (Eigen::Index j = 0; j < q.cols(); ++j) {
    if (r(j, j) < 0) q.col(j) *= -1.0;
  }
  return from_eigen(q);
}

Tensor least_squares(const Tensor& X, const Tensor& y) {
  const RowMat a = to_eigen(X);
  const Eigen::VectorXd b = Eigen::Map<const Eigen::VectorXd>(y.data().data(), static_cast<Eigen::Index>(y.size()));
  const Eigen::VectorXd w = a.completeOrthogonalDecomposition().solve(b);
  return Tensor::vector(std::vector<double>(w.data(), w.data() + w.size()));
}

double orthonormality_defect(const Tensor& X) {
  const RowMat a = to_eigen(X);
  const RowMat g = a.transpose() * a - RowMat::Identity(a.cols(), a.cols());
  return g.cwiseAbs().maxCoeff();
}

std::size_t rank(const Tensor& X, double tol) {
  Eigen::ColPivHouseholderQR<RowMat> qr(to_eigen(X));
  qr.setThreshold(tol);
  return static_cast<std::size_t>(qr.rank());
}

}  // namespace spred::linalg
