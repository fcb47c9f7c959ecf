#include "spred/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <unordered_map>
#include <unordered_set>

namespace spred {

namespace {

Var make_node(Tensor value, std::vector<NodePtr> parents, std::string_view op, BackwardRule rule) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->op = op;
  node->requires_grad =
      std::any_of(parents.begin(), parents.end(), [](const NodePtr& p) { return p->requires_grad; });
  if (node->requires_grad) node->rule = std::move(rule);
  node->parents = std::move(parents);
  return Var(std::move(node));
}

const Tensor& parent_value(const Node& self, std::size_t i) { return self.parents[i]->value; }

bool wants(const Node& self, std::size_t i) { return self.parents[i]->requires_grad; }

std::vector<const Node*> topological_order(const Node* root) {
  std::vector<const Node*> order;
  std::unordered_set<const Node*> visited;
  // Iterative post-order DFS: (node, next parent index).
  std::vector<std::pair<const Node*, std::size_t>> stack;
  stack.emplace_back(root, 0);
  visited.insert(root);
  while (!stack.empty()) {
    auto& [node, idx] = stack.back();
    if (idx < node->parents.size()) {
      const Node* p = node->parents[idx++].get();
      if (p->requires_grad && visited.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  return order;
}

std::unordered_map<const Node*, Tensor> run_backward(const Var& loss) {
  if (!loss) throw std::invalid_argument("backward: null loss");
  if (loss.value().size() != 1) {
    throw ShapeError("backward: loss must be scalar, got shape " + shape_to_string(loss.shape()));
  }
  std::unordered_map<const Node*, Tensor> grads;
  if (!loss.requires_grad()) return grads;
  const auto order = topological_order(loss.node().get());
  grads[loss.node().get()] = Tensor(loss.shape(), 1.0);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    const Node* node = *it;
    auto found = grads.find(node);
    if (found == grads.end() || !node->rule) continue;
    const Tensor upstream = found->second;
    auto parent_grads = node->rule(*node, upstream);
    for (std::size_t i = 0; i < node->parents.size(); ++i) {
      if (i >= parent_grads.size() || parent_grads[i].empty()) continue;
      const Node* p = node->parents[i].get();
      if (!p->requires_grad) continue;
      auto [slot, inserted] = grads.try_emplace(p, std::move(parent_grads[i]));
      if (!inserted) slot->second += parent_grads[i];
    }
  }
  return grads;
}

}  // namespace

Activation parse_activation(std::string_view name) {
  if (name == "relu") return Activation::relu;
  if (name == "swish") return Activation::swish;
  if (name == "sigmoid") return Activation::sigmoid;
  if (name == "identity") return Activation::identity;
  throw std::invalid_argument("unknown activation '" + std::string(name) + "'");
}

std::string_view to_string(Activation kind) {
  switch (kind) {
    case Activation::relu: return "relu";
    case Activation::swish: return "swish";
    case Activation::sigmoid: return "sigmoid";
    case Activation::identity: return "identity";
  }
  return "identity";
}

Var Graph::constant(Tensor value) const {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->op = "constant";
  return Var(std::move(node));
}

Var Graph::parameter(std::string name, Tensor value) {
  for (const auto& p : params_) {
    if (p.node()->name == name) throw std::invalid_argument("duplicate parameter '" + name + "'");
  }
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->requires_grad = true;
  node->name = std::move(name);
  params_.emplace_back(std::move(node));
  return params_.back();
}

GradientMap Graph::backward(const Var& loss) const {
  auto grads = run_backward(loss);
  GradientMap out;
  for (const auto& p : params_) {
    auto it = grads.find(p.node().get());
    out.emplace(p.node()->name, it != grads.end() ? std::move(it->second) : Tensor(p.shape(), 0.0));
  }
  return out;
}

GradientMap backward(const Var& loss) {
  auto grads = run_backward(loss);
  GradientMap out;
  for (auto& [node, g] : grads) {
    if (node->parents.empty() && !node->name.empty()) out.emplace(node->name, std::move(g));
  }
  return out;
}

Var add(const Var& a, const Var& b) {
  require_same_shape(a.value(), b.value(), "add");
  return make_node(a.value() + b.value(), {a.node(), b.node()}, "add",
                   [](const Node&, const Tensor& g) { return std::vector<Tensor>{g, g}; });
}

Var sub(const Var& a, const Var& b) {
  require_same_shape(a.value(), b.value(), "sub");
  return make_node(a.value() - b.value(), {a.node(), b.node()}, "sub",
                   [](const Node&, const Tensor& g) { return std::vector<Tensor>{g, g * -1.0}; });
}

Var scale(const Var& a, double s) {
  return make_node(a.value() * s, {a.node()}, "scale",
                   [s](const Node&, const Tensor& g) { return std::vector<Tensor>{g * s}; });
}

Var hadamard(const Var& a, const Var& b) {
  return make_node(spred::hadamard(a.value(), b.value()), {a.node(), b.node()}, "hadamard",
                   [](const Node& self, const Tensor& g) {
                     std::vector<Tensor> out(2);
                     if (wants(self, 0)) out[0] = spred::hadamard(g, parent_value(self, 1));
                     if (wants(self, 1)) out[1] = spred::hadamard(g, parent_value(self, 0));
                     return out;
                   });
}

Var matmul(const Var& a, const Var& b) {
  return make_node(spred::matmul(a.value(), b.value()), {a.node(), b.node()}, "matmul",
                   [](const Node& self, const Tensor& g) {
                     std::vector<Tensor> out(2);
                     const Tensor& av = parent_value(self, 0);
                     const Tensor& bv = parent_value(self, 1);
                     if (wants(self, 0)) {
                       // dA = G B^T; a rank-1 B makes this an outer product.
                       if (bv.rank() == 1) {
                         out[0] = spred::matmul_nt(g.reshaped({g.size(), 1}), bv.reshaped({bv.size(), 1}));
                       } else {
                         out[0] = spred::matmul_nt(g, bv);
                       }
                     }
                     if (wants(self, 1)) out[1] = spred::matmul_tn(av, g);
                     return out;
                   });
}

Var transpose(const Var& a) {
  if (a.value().rank() != 2) throw ShapeError("transpose: rank 2 required, got " + shape_to_string(a.shape()));
  return make_node(a.value().transposed(), {a.node()}, "transpose",
                   [](const Node&, const Tensor& g) { return std::vector<Tensor>{g.transposed()}; });
}

Var reshape(const Var& a, Shape shape) {
  Shape original = a.shape();
  return make_node(a.value().reshaped(std::move(shape)), {a.node()}, "reshape",
                   [original](const Node&, const Tensor& g) {
                     return std::vector<Tensor>{g.reshaped(original)};
                   });
}

Var add_bias(const Var& a, const Var& bias) {
  const Tensor& av = a.value();
  const Tensor& bv = bias.value();
  if (av.rank() != 2 || bv.rank() != 1 || bv.size() != av.cols()) {
    throw ShapeError("add_bias: cannot add " + shape_to_string(bv.shape()) + " to rows of " +
                     shape_to_string(av.shape()));
  }
  Tensor out = av;
  const std::size_t m = av.rows(), n = av.cols();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out(i, j) += bv[j];
  return make_node(std::move(out), {a.node(), bias.node()}, "add_bias", [m, n](const Node&, const Tensor& g) {
    Tensor gb(Shape{n});
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) gb[j] += g(i, j);
    return std::vector<Tensor>{g, std::move(gb)};
  });
}

Var normalize_columns(const Var& x) {
  const Tensor& xv = x.value();
  if (xv.rank() != 2) throw ShapeError("normalize_columns expects a matrix, got " + shape_to_string(xv.shape()));
  const std::size_t m = xv.rows(), n = xv.cols();
  std::vector<double> norms(n, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) norms[j] += xv(i, j) * xv(i, j);
  for (auto& v : norms) {
    if (v == 0.0) throw std::domain_error("normalize_columns: zero column");
    v = std::sqrt(v);
  }
  Tensor out = xv;
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out(i, j) /= norms[j];
  return make_node(std::move(out), {x.node()}, "normalize_columns",
                   [m, n, norms](const Node& self, const Tensor& g) {
                     // d(x/|x|) = (g - b (b.g)) / |x| per column.
                     const Tensor& b = self.value;
                     std::vector<double> bg(n, 0.0);
                     for (std::size_t i = 0; i < m; ++i)
                       for (std::size_t j = 0; j < n; ++j) bg[j] += b(i, j) * g(i, j);
                     Tensor gx(Shape{m, n});
                     for (std::size_t i = 0; i < m; ++i)
                       for (std::size_t j = 0; j < n; ++j) gx(i, j) = (g(i, j) - b(i, j) * bg[j]) / norms[j];
                     return std::vector<Tensor>{std::move(gx)};
                   });
}

Var scale_columns(const Var& x, const Var& u) {
  const Tensor& xv = x.value();
  const Tensor& uv = u.value();
  if (xv.rank() != 2 || uv.rank() != 1 || uv.size() != xv.cols()) {
    throw ShapeError("scale_columns: cannot scale columns of " + shape_to_string(xv.shape()) + " by " +
                     shape_to_string(uv.shape()));
  }
  const std::size_t m = xv.rows(), n = xv.cols();
  Tensor out = xv;
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out(i, j) *= uv[j];
  return make_node(std::move(out), {x.node(), u.node()}, "scale_columns",
                   [m, n](const Node& self, const Tensor& g) {
                     const Tensor& xv = parent_value(self, 0);
                     const Tensor& uv = parent_value(self, 1);
                     std::vector<Tensor> out(2);
                     if (wants(self, 0)) {
                       Tensor gx = g;
                       for (std::size_t i = 0; i < m; ++i)
                         for (std::size_t j = 0; j < n; ++j) gx(i, j) *= uv[j];
                       out[0] = std::move(gx);
                     }
                     if (wants(self, 1)) {
                       Tensor gu(Shape{n});
                       for (std::size_t i = 0; i < m; ++i)
                         for (std::size_t j = 0; j < n; ++j) gu[j] += g(i, j) * xv(i, j);
                       out[1] = std::move(gu);
                     }
                     return out;
                   });
}

Var scalar_mul(const Var& s, const Var& a) {
  if (s.value().size() != 1) throw ShapeError("scalar_mul: left operand must hold one entry, got " + shape_to_string(s.shape()));
  return make_node(a.value() * s.value().item(), {s.node(), a.node()}, "scalar_mul",
                   [](const Node& self, const Tensor& g) {
                     std::vector<Tensor> out(2);
                     const Tensor& sv = parent_value(self, 0);
                     if (wants(self, 0)) out[0] = Tensor(sv.shape(), dot(g, parent_value(self, 1)));
                     if (wants(self, 1)) out[1] = g * sv.item();
                     return out;
                   });
}

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double apply_activation(double x, Activation kind) {
  switch (kind) {
    case Activation::relu: return x > 0 ? x : 0.0;
    case Activation::swish: return x * sigmoid(x);
    case Activation::sigmoid: return sigmoid(x);
    case Activation::identity: return x;
  }
  return x;
}

Tensor apply_activation(const Tensor& x, Activation kind) {
  Tensor out = x;
  for (auto& v : out.data()) v = apply_activation(v, kind);
  return out;
}

Var activation(const Var& x, Activation kind) {
  return make_node(apply_activation(x.value(), kind), {x.node()}, "activation",
                   [kind](const Node& self, const Tensor& g) {
                     const Tensor& xv = parent_value(self, 0);
                     Tensor out = g;
                     for (std::size_t i = 0; i < out.size(); ++i) {
                       const double z = xv[i];
                       double d = 1.0;
                       switch (kind) {
                         case Activation::relu: d = z > 0 ? 1.0 : 0.0; break;
                         case Activation::swish: {
                           const double s = sigmoid(z);
                           d = s + z * s * (1.0 - s);
                           break;
                         }
                         case Activation::sigmoid: {
                           const double s = self.value[i];
                           d = s * (1.0 - s);
                           break;
                         }
                         case Activation::identity: break;
                       }
                       out[i] *= d;
                     }
                     return std::vector<Tensor>{std::move(out)};
                   });
}

Var sum(const Var& a) {
  return make_node(Tensor::scalar(a.value().sum()), {a.node()}, "sum", [](const Node& self, const Tensor& g) {
    return std::vector<Tensor>{Tensor(parent_value(self, 0).shape(), g.item())};
  });
}

Var mean(const Var& a) {
  const double n = static_cast<double>(a.value().size());
  return make_node(Tensor::scalar(a.value().sum() / n), {a.node()}, "mean", [n](const Node& self, const Tensor& g) {
    return std::vector<Tensor>{Tensor(parent_value(self, 0).shape(), g.item() / n)};
  });
}

Var squared_norm(const Var& a) {
  return make_node(Tensor::scalar(a.value().squared_norm()), {a.node()}, "squared_norm",
                   [](const Node& self, const Tensor& g) {
                     return std::vector<Tensor>{parent_value(self, 0) * (2.0 * g.item())};
                   });
}

Var squared_error(const Var& a, const Var& b) {
  require_same_shape(a.value(), b.value(), "squared_error");
  return make_node(Tensor::scalar((a.value() - b.value()).squared_norm()), {a.node(), b.node()}, "squared_error",
                   [](const Node& self, const Tensor& g) {
                     Tensor diff = parent_value(self, 0) - parent_value(self, 1);
                     diff *= 2.0 * g.item();
                     std::vector<Tensor> out(2);
                     if (wants(self, 1)) out[1] = diff * -1.0;
                     if (wants(self, 0)) out[0] = std::move(diff);
                     return out;
                   });
}

Var l1_norm(const Var& a) {
  return make_node(Tensor::scalar(a.value().l1_norm()), {a.node()}, "l1_norm", [](const Node& self, const Tensor& g) {
    Tensor out = parent_value(self, 0);
    for (auto& v : out.data()) v = (v > 0 ? 1.0 : (v < 0 ? -1.0 : 0.0)) * g.item();
    return std::vector<Tensor>{std::move(out)};
  });
}

Var l2_norm(const Var& a) {
  const double n = a.value().norm();
  return make_node(Tensor::scalar(n), {a.node()}, "l2_norm", [n](const Node& self, const Tensor& g) {
    if (n == 0.0) return std::vector<Tensor>{Tensor(parent_value(self, 0).shape(), 0.0)};
    return std::vector<Tensor>{parent_value(self, 0) * (g.item() / n)};
  });
}

Var concat(const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  std::vector<double> data;
  std::vector<NodePtr> parents;
  std::vector<std::size_t> sizes;
  for (const auto& p : parts) {
    const auto& v = p.value().values();
    data.insert(data.end(), v.begin(), v.end());
    parents.push_back(p.node());
    sizes.push_back(v.size());
  }
  return make_node(Tensor::vector(std::move(data)), std::move(parents), "concat",
                   [sizes](const Node& self, const Tensor& g) {
                     std::vector<Tensor> out(sizes.size());
                     std::size_t offset = 0;
                     for (std::size_t i = 0; i < sizes.size(); ++i) {
                       if (wants(self, i)) {
                         std::vector<double> slice(g.values().begin() + static_cast<std::ptrdiff_t>(offset),
                                                   g.values().begin() + static_cast<std::ptrdiff_t>(offset + sizes[i]));
                         out[i] = Tensor(parent_value(self, i).shape(), std::move(slice));
                       }
                       offset += sizes[i];
                     }
                     return out;
                   });
}

Tensor softmax_rows(const Tensor& logits) {
  Tensor p = logits;
  const std::size_t n = logits.rows(), c = logits.cols();
  for (std::size_t i = 0; i < n; ++i) {
    double mx = p(i, 0);
    for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, p(i, j));
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      p(i, j) = std::exp(p(i, j) - mx);
      z += p(i, j);
    }
    for (std::size_t j = 0; j < c; ++j) p(i, j) /= z;
  }
  return p;
}

Var softmax_cross_entropy(const Var& logits, const std::vector<std::size_t>& labels) {
  const Tensor& lv = logits.value();
  if (lv.rank() != 2) throw ShapeError("softmax_cross_entropy: logits must be rank 2, got " + shape_to_string(lv.shape()));
  const std::size_t n = lv.rows(), c = lv.cols();
  if (labels.size() != n) {
    throw ShapeError("softmax_cross_entropy: " + std::to_string(labels.size()) + " labels for " + std::to_string(n) +
                     " rows");
  }
  double loss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] >= c) {
      throw std::out_of_range("softmax_cross_entropy: label " + std::to_string(labels[i]) + " outside [0, " +
                              std::to_string(c) + ")");
    }
    double mx = lv(i, 0);
    for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, lv(i, j));
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) z += std::exp(lv(i, j) - mx);
    loss += std::log(z) + mx - lv(i, labels[i]);
  }
  loss /= static_cast<double>(n);
  return make_node(Tensor::scalar(loss), {logits.node()}, "softmax_cross_entropy",
                   [labels](const Node& self, const Tensor& g) {
                     Tensor p = softmax_rows(parent_value(self, 0));
                     const std::size_t n = p.rows();
                     for (std::size_t i = 0; i < n; ++i) p(i, labels[i]) -= 1.0;
                     p *= g.item() / static_cast<double>(n);
                     return std::vector<Tensor>{std::move(p)};
                   });
}

}  // namespace spred
