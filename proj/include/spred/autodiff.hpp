#pragma once

#include <cstddef>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "spred/tensor.hpp"

namespace spred {

enum class Activation { relu, swish, sigmoid, identity };

Activation parse_activation(std::string_view name);
std::string_view to_string(Activation kind);

// Parameter name -> gradient tensor with the parameter's shape.
using GradientMap = std::map<std::string, Tensor>;

struct Node;
using NodePtr = std::shared_ptr<const Node>;

// Local gradient rule: given the node and the upstream gradient, return one
// gradient per parent. An empty Tensor means "no contribution".
using BackwardRule = std::function<std::vector<Tensor>(const Node& self, const Tensor& upstream)>;

struct Node {
  Tensor value;
  std::vector<NodePtr> parents;
  BackwardRule rule;
  std::string_view op = "leaf";
  bool requires_grad = false;
  std::string name;  // set for named parameters only
};

// Handle to a node on a differentiation tape. Cheap to copy.
class Var {
 public:
  Var() = default;
  explicit Var(NodePtr node) : node_(std::move(node)) {}

  const Tensor& value() const { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  const NodePtr& node() const { return node_; }
  explicit operator bool() const { return static_cast<bool>(node_); }

 private:
  NodePtr node_;
};

// Owns the named leaves of one forward pass. Build a fresh Graph per
// evaluation; nodes are immutable once created.
class Graph {
 public:
  Var constant(Tensor value) const;
  // Throws std::invalid_argument on a duplicate name.
  Var parameter(std::string name, Tensor value);

  // Reverse-mode gradients of a scalar loss for every registered parameter.
  // Parameters the loss does not depend on get an exact zero gradient.
  GradientMap backward(const Var& loss) const;

  const std::vector<Var>& parameters() const noexcept { return params_; }

 private:
  std::vector<Var> params_;
};

// Gradients for the named leaves reachable from `loss`.
GradientMap backward(const Var& loss);

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var hadamard(const Var& a, const Var& b);
Var matmul(const Var& a, const Var& b);
Var transpose(const Var& a);
Var reshape(const Var& a, Shape shape);
// a[m x n] + bias[n] on every row.
Var add_bias(const Var& a, const Var& bias);
// x[m x n] with column j multiplied by u[j].
Var scale_columns(const Var& x, const Var& u);
// Columns of x[m x n] divided by their Euclidean norms. Zero columns are rejected.
Var normalize_columns(const Var& x);
// Single-entry s times every entry of a.
Var scalar_mul(const Var& s, const Var& a);
Var activation(const Var& x, Activation kind);
Var sum(const Var& a);
Var mean(const Var& a);
Var squared_norm(const Var& a);
// ||a - b||^2 summed over entries.
Var squared_error(const Var& a, const Var& b);
// Subgradient sign(x), zero at the origin.
Var l1_norm(const Var& a);
// Euclidean norm; zero gradient at the origin.
Var l2_norm(const Var& a);
// Concatenates flattened inputs into one rank-1 tensor.
Var concat(const std::vector<Var>& parts);
// Mean negative log-softmax of the true class over rows of logits[n x C].
Var softmax_cross_entropy(const Var& logits, const std::vector<std::size_t>& labels);

inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return sub(a, b); }
inline Var operator*(double s, const Var& a) { return scale(a, s); }

// Plain value-level helpers shared by the ops and the tasks.
double sigmoid(double x);
double apply_activation(double x, Activation kind);
Tensor apply_activation(const Tensor& x, Activation kind);
// Row-wise softmax of logits[n x C].
Tensor softmax_rows(const Tensor& logits);

}  // namespace spred
