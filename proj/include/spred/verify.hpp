#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "spred/tensor.hpp"

namespace spred {

struct InvariantResult {
  std::string name;
  bool passed = false;
  double worst = 0.0;  // largest observed violation measure
  double tolerance = 0.0;
  std::size_t trials = 0;
  std::string detail;
};

struct VerifyOptions {
  std::uint64_t seed = 0;
  std::size_t trials = 200;
};

// Random-instance checks of the factored objective identities, rebalancing,
// split rescaling, group identity, gradients of every task objective, oracle
// agreement and optimizer state round-trips.
std::vector<InvariantResult> run_invariant_suite(const VerifyOptions& options);

using ScalarFunction = std::function<double(const std::map<std::string, Tensor>&)>;
// Central differences with step h.
std::map<std::string, Tensor> numeric_gradient(const ScalarFunction& f, std::map<std::string, Tensor> point,
                                               double h = 1e-5);
// max |a - n| / max(max |n|, floor) over every entry.
double gradient_error(const std::map<std::string, Tensor>& analytic, const std::map<std::string, Tensor>& numeric,
                      double floor = 1e-3);

}  // namespace spred
