#include "spred/tensor.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace spred {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

// Views a rank-1 tensor as a column and a rank-2 tensor as itself.
ConstMapMat as_matrix(const Tensor& t) {
  if (t.rank() == 1) return {t.data().data(), static_cast<Eigen::Index>(t.shape()[0]), 1};
  return {t.data().data(), static_cast<Eigen::Index>(t.shape()[0]),
          static_cast<Eigen::Index>(t.shape()[1])};
}

void require_matrix_like(const Tensor& t, const char* op) {
  if (t.rank() != 1 && t.rank() != 2) {
    throw ShapeError(std::string(op) + ": expected rank 1 or 2, got shape " +
                     shape_to_string(t.shape()));
  }
}

}  // namespace

std::string shape_to_string(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << 'x';
    out << shape[i];
  }
  out << ']';
  return out.str();
}

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)) {
  for (auto e : shape_) {
    if (e == 0) throw ShapeError("tensor extents must be positive, got " + shape_to_string(shape_));
  }
  data_.assign(shape_numel(shape_), fill);
}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
  for (auto e : shape_) {
    if (e == 0) throw ShapeError("tensor extents must be positive, got " + shape_to_string(shape_));
  }
  if (data_.size() != shape_numel(shape_)) {
    throw ShapeError("data length " + std::to_string(data_.size()) + " does not match shape " +
                     shape_to_string(shape_));
  }
}

Tensor Tensor::scalar(double value) { return Tensor(Shape{}, std::vector<double>{value}); }

Tensor Tensor::vector(std::initializer_list<double> values) {
  return Tensor(Shape{values.size()}, std::vector<double>(values));
}

Tensor Tensor::vector(std::vector<double> values) {
  const auto n = values.size();
  return Tensor(Shape{n}, std::move(values));
}

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t m = rows.size();
  const std::size_t n = m ? rows.begin()->size() : 0;
  std::vector<double> data;
  data.reserve(m * n);
  for (const auto& r : rows) {
    if (r.size() != n) throw ShapeError("ragged matrix literal");
    data.insert(data.end(), r.begin(), r.end());
  }
  return Tensor(Shape{m, n}, std::move(data));
}

Tensor Tensor::identity(std::size_t n) {
  Tensor t(Shape{n, n});
  for (std::size_t i = 0; i < n; ++i) t(i, i) = 1.0;
  return t;
}

std::size_t Tensor::rows() const {
  if (rank() == 0) return 1;
  return shape_[0];
}

std::size_t Tensor::cols() const {
  if (rank() < 2) return 1;
  return shape_[1];
}

double Tensor::item() const {
  if (data_.size() != 1) {
    throw ShapeError("item() needs a single-entry tensor, got shape " + shape_to_string(shape_));
  }
  return data_[0];
}

Tensor Tensor::reshaped(Shape shape) const {
  if (shape_numel(shape) != data_.size()) {
    throw ShapeError("cannot reshape " + shape_to_string(shape_) + " to " + shape_to_string(shape));
  }
  return Tensor(std::move(shape), data_);
}

Tensor Tensor::transposed() const {
  if (rank() == 1) return Tensor(Shape{1, shape_[0]}, data_);
  if (rank() != 2) throw ShapeError("transpose needs rank 2, got " + shape_to_string(shape_));
  Tensor out(Shape{shape_[1], shape_[0]});
  for (std::size_t i = 0; i < shape_[0]; ++i)
    for (std::size_t j = 0; j < shape_[1]; ++j) out(j, i) = (*this)(i, j);
  return out;
}

Tensor Tensor::row(std::size_t i) const {
  const std::size_t n = cols();
  std::vector<double> r(data_.begin() + static_cast<std::ptrdiff_t>(i * n),
                        data_.begin() + static_cast<std::ptrdiff_t>((i + 1) * n));
  return Tensor::vector(std::move(r));
}

Tensor Tensor::col(std::size_t j) const {
  const std::size_t m = rows(), n = cols();
  std::vector<double> c(m);
  for (std::size_t i = 0; i < m; ++i) c[i] = data_[i * n + j];
  return Tensor::vector(std::move(c));
}

void Tensor::set_col(std::size_t j, const Tensor& values) {
  const std::size_t m = rows(), n = cols();
  if (values.size() != m) throw ShapeError("set_col: length mismatch");
  for (std::size_t i = 0; i < m; ++i) data_[i * n + j] = values[i];
}

Tensor& Tensor::operator+=(const Tensor& other) {
  require_same_shape(*this, other, "add");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
  return *this;
}

Tensor& Tensor::operator-=(const Tensor& other) {
  require_same_shape(*this, other, "sub");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= other.data_[i];
  return *this;
}

Tensor& Tensor::operator*=(double s) {
  for (auto& v : data_) v *= s;
  return *this;
}

void Tensor::fill(double value) { std::fill(data_.begin(), data_.end(), value); }

void Tensor::axpy(double a, const Tensor& x) {
  require_same_shape(*this, x, "axpy");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += a * x.data_[i];
}

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

double Tensor::sum() const { return std::accumulate(data_.begin(), data_.end(), 0.0); }

double Tensor::squared_norm() const {
  double s = 0.0;
  for (double v : data_) s += v * v;
  return s;
}

double Tensor::norm() const { return std::sqrt(squared_norm()); }

double Tensor::abs_max() const {
  double m = 0.0;
  for (double v : data_) m = std::max(m, std::abs(v));
  return m;
}

double Tensor::l1_norm() const {
  double s = 0.0;
  for (double v : data_) s += std::abs(v);
  return s;
}

Tensor operator+(Tensor a, const Tensor& b) { return a += b; }
Tensor operator-(Tensor a, const Tensor& b) { return a -= b; }
Tensor operator*(Tensor a, double s) { return a *= s; }
Tensor operator*(double s, Tensor a) { return a *= s; }

Tensor hadamard(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "hadamard");
  Tensor out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b[i];
  return out;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2) throw ShapeError("matmul: left operand must be rank 2, got " + shape_to_string(a.shape()));
  require_matrix_like(b, "matmul");
  if (a.shape()[1] != b.shape()[0]) {
    throw ShapeError("matmul: inner extents disagree for " + shape_to_string(a.shape()) + " x " +
                     shape_to_string(b.shape()));
  }
  const std::size_t m = a.shape()[0];
  Tensor out = b.rank() == 1 ? Tensor(Shape{m}) : Tensor(Shape{m, b.shape()[1]});
  MapMat res(out.data().data(), static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(b.cols()));
  res.noalias() = as_matrix(a) * as_matrix(b);
  return out;
}

Tensor matmul_tn(const Tensor& a, const Tensor& b) {
  require_matrix_like(a, "matmul_tn");
  require_matrix_like(b, "matmul_tn");
  if (a.shape()[0] != b.shape()[0]) {
    throw ShapeError("matmul_tn: leading extents disagree for " + shape_to_string(a.shape()) + "^T x " +
                     shape_to_string(b.shape()));
  }
  const std::size_t m = a.cols();
  Tensor out = b.rank() == 1 ? Tensor(Shape{m}) : Tensor(Shape{m, b.shape()[1]});
  MapMat res(out.data().data(), static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(b.cols()));
  res.noalias() = as_matrix(a).transpose() * as_matrix(b);
  return out;
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  require_matrix_like(a, "matmul_nt");
  require_matrix_like(b, "matmul_nt");
  if (a.cols() != b.cols()) {
    throw ShapeError("matmul_nt: trailing extents disagree for " + shape_to_string(a.shape()) + " x " +
                     shape_to_string(b.shape()) + "^T");
  }
  const std::size_t m = a.shape()[0], k = b.shape()[0];
  Tensor out(Shape{m, k});
  MapMat res(out.data().data(), static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(k));
  res.noalias() = as_matrix(a) * as_matrix(b).transpose();
  return out;
}

double dot(const Tensor& a, const Tensor& b) {
  if (a.size() != b.size()) throw ShapeError("dot: length mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "max_abs_diff");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_to_string(a.shape()) + " vs " +
                     shape_to_string(b.shape()));
  }
}

}  // namespace spred
