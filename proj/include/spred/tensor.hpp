#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace spred {

using Shape = std::vector<std::size_t>;

std::string shape_to_string(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Dense row-major array of doubles. Rank 0 is a scalar holding one entry.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor scalar(double value);
  static Tensor vector(std::initializer_list<double> values);
  static Tensor vector(std::vector<double> values);
  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows);
  static Tensor identity(std::size_t n);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }
  const std::vector<double>& values() const noexcept { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }
  double& operator()(std::size_t i, std::size_t j) { return data_[i * shape_[1] + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data_[i * shape_[1] + j]; }

  // Value of a single-entry tensor.
  double item() const;

  Tensor reshaped(Shape shape) const;
  Tensor transposed() const;
  Tensor row(std::size_t i) const;
  Tensor col(std::size_t j) const;
  void set_col(std::size_t j, const Tensor& values);

  Tensor& operator+=(const Tensor& other);
  Tensor& operator-=(const Tensor& other);
  Tensor& operator*=(double s);
  void fill(double value);
  void axpy(double a, const Tensor& x);

  bool all_finite() const;
  double sum() const;
  double squared_norm() const;
  double norm() const;
  double abs_max() const;
  double l1_norm() const;

  friend bool operator==(const Tensor& a, const Tensor& b) = default;

 private:
  Shape shape_;
  std::vector<double> data_;
};

Tensor operator+(Tensor a, const Tensor& b);
Tensor operator-(Tensor a, const Tensor& b);
Tensor operator*(Tensor a, double s);
Tensor operator*(double s, Tensor a);
Tensor hadamard(const Tensor& a, const Tensor& b);
Tensor matmul(const Tensor& a, const Tensor& b);
// a^T b without materializing the transpose.
Tensor matmul_tn(const Tensor& a, const Tensor& b);
// a b^T without materializing the transpose.
Tensor matmul_nt(const Tensor& a, const Tensor& b);
double dot(const Tensor& a, const Tensor& b);
double max_abs_diff(const Tensor& a, const Tensor& b);

void require_same_shape(const Tensor& a, const Tensor& b, const char* op);

}  // namespace spred
