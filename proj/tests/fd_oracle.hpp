#pragma once

// Central finite differences, independent of the reverse-mode tape.

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <string>

#include "spred/tensor.hpp"

namespace spred::testing {

using ScalarFn = std::function<double(const std::map<std::string, Tensor>&)>;

inline std::map<std::string, Tensor> finite_difference_gradient(const ScalarFn& f,
                                                                std::map<std::string, Tensor> point,
                                                                double h = 1e-5) {
  std::map<std::string, Tensor> out;
  for (auto& [name, t] : point) {
    Tensor g(t.shape(), 0.0);
    for (std::size_t i = 0; i < t.size(); ++i) {
      const double orig = t[i];
      t[i] = orig + h;
      const double fp = f(point);
      t[i] = orig - h;
      const double fm = f(point);
      t[i] = orig;
      g[i] = (fp - fm) / (2.0 * h);
    }
    out.emplace(name, std::move(g));
  }
  return out;
}

// max_i |a_i - b_i| / max(max|b|, floor), over all named tensors.
inline double relative_gradient_error(const std::map<std::string, Tensor>& analytic,
                                      const std::map<std::string, Tensor>& numeric, double floor = 1e-3) {
  double worst = 0.0;
  for (const auto& [name, n] : numeric) {
    const Tensor& a = analytic.at(name);
    const double scale = std::max(n.abs_max(), floor);
    for (std::size_t i = 0; i < n.size(); ++i) worst = std::max(worst, std::abs(a[i] - n[i]) / scale);
  }
  return worst;
}

}  // namespace spred::testing
