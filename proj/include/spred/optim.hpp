#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include "spred/spred.hpp"

namespace spred {

enum class OptimizerKind { sgd, adam, lbfgs };

OptimizerKind parse_optimizer(std::string_view name);
std::string_view to_string(OptimizerKind kind);

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::sgd;
  double lr = 0.01;
  double momentum = 0.0;
  // Adam
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  // Decoupled (AdamW-style) decay applied outside the loss; zero keeps the objective exact.
  double decoupled_decay = 0.0;
  // L-BFGS
  std::size_t memory = 10;
  double backtrack = 0.5;
  double sufficient_decrease = 1e-4;
  std::size_t max_backtracks = 40;

  void validate() const;
  friend bool operator==(const OptimizerConfig&, const OptimizerConfig&) = default;
};

struct CurvaturePair {
  std::vector<double> s;
  std::vector<double> y;
  friend bool operator==(const CurvaturePair&, const CurvaturePair&) = default;
};

struct OptimizerState {
  OptimizerConfig config;
  std::uint64_t step = 0;
  ParamSet velocity;  // SGD momentum buffer
  ParamSet first_moment;
  ParamSet second_moment;
  std::deque<CurvaturePair> history;
  // Last L-BFGS evaluation, reused when the parameters have not moved.
  std::vector<double> cached_point;
  std::vector<double> cached_grad;
  double cached_value = 0.0;
  std::uint64_t fallbacks = 0;

  explicit OptimizerState(OptimizerConfig cfg = {}) : config(cfg) { config.validate(); }
  void reset_history();
  friend bool operator==(const OptimizerState&, const OptimizerState&) = default;
};

// v <- mu v + g; p <- p - lr v.
void sgd_step(ParamSet& params, const GradientMap& grads, OptimizerState& state);
// Adam with bias correction.
void adam_step(ParamSet& params, const GradientMap& grads, OptimizerState& state);
// Dispatches to sgd_step or adam_step by state.config.kind.
void first_order_step(ParamSet& params, const GradientMap& grads, OptimizerState& state);

// Objective closure: returns the loss and fills the gradient map.
using ObjectiveFn = std::function<double(const ParamSet&, GradientMap&)>;

struct LbfgsStep {
  double value_before = 0.0;
  double value_after = 0.0;
  double step_length = 0.0;
  double grad_norm = 0.0;
  std::size_t evaluations = 0;
  bool stationary = false;
  bool fell_back = false;  // line search failed on the quasi-Newton direction
};

// Two-loop recursion direction with a backtracking (Armijo) line search.
LbfgsStep lbfgs_step(ParamSet& params, const ObjectiveFn& objective, OptimizerState& state);

std::string serialize(const OptimizerState& state);
OptimizerState deserialize_optimizer_state(std::string_view text);

std::vector<double> flatten(const ParamSet& params);
void unflatten(ParamSet& params, const std::vector<double>& flat);
std::vector<double> flatten(const GradientMap& grads, const ParamSet& layout);

}  // namespace spred
