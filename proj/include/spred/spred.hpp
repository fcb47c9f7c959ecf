#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "spred/autodiff.hpp"
#include "spred/tensor.hpp"

namespace spred {

enum class SpredMode { elementwise, group };
enum class InitScheme { sqrt_standard, factor_unit };

SpredMode parse_mode(std::string_view name);
InitScheme parse_init(std::string_view name);
std::string_view to_string(SpredMode mode);
std::string_view to_string(InitScheme init);

// A sparse parameter V stored redundantly as U (.) W (elementwise) or u W
// (group), with the factors penalized by alpha ||U||^2 + beta ||W||^2.
// Minima of the factored objective coincide with minima of L(V) + 2 kappa R(V),
// R the L1 norm (elementwise) or the Euclidean norm (group).
struct SpredParam {
  SpredMode mode = SpredMode::elementwise;
  Tensor U;  // shape of W, or a single entry in group mode
  Tensor W;
  double alpha = 0.0;
  double beta = 0.0;
  double kappa = 0.0;

  // Throws std::invalid_argument when shapes or the alpha*beta = kappa^2 split are inconsistent.
  void validate() const;
  double u() const { return U.item(); }
};

SpredParam make_spred_param(const Shape& shape, double kappa, SpredMode mode, InitScheme init, std::uint64_t seed,
                            std::optional<std::size_t> fan_in = std::nullopt);

// Builds a parameter from explicit factors with the canonical alpha = beta = kappa split.
SpredParam spred_param_from_factors(Tensor U, Tensor W, double kappa, SpredMode mode = SpredMode::elementwise);

Tensor effective_value(const SpredParam& p);
double penalty(const SpredParam& p);
// 2 kappa ||V||_1 (elementwise) or 2 kappa ||V||_2 (group).
double sparse_penalty(const Tensor& V, double kappa, SpredMode mode);

// Same product, balanced factors, penalty no larger than before.
SpredParam rebalance(const SpredParam& p);
double balance_gap(const SpredParam& p);

// Re-express a symmetric-split parameter under split (alpha, beta) with
// alpha * beta = kappa^2: U <- U (beta/alpha)^(1/4), W <- W (alpha/beta)^(1/4).
SpredParam rescale_to_split(const SpredParam& p, double alpha, double beta);

using ParamSet = std::map<std::string, Tensor>;
using ValueMap = std::map<std::string, Var>;
// Base loss over effective sparse values and dense parameters, keyed by name.
using BaseLoss = std::function<Var(Graph&, const ValueMap&)>;

struct SpredModel {
  std::map<std::string, SpredParam> sparse;
  std::map<std::string, Tensor> dense;
  BaseLoss base_loss;
  // Small L2 on the dense parameters keeps them from drifting.
  double dense_decay = 1e-5;
};

std::string factor_u_name(const std::string& sparse_name);
std::string factor_w_name(const std::string& sparse_name);

// Flattened view of every trainable tensor: "<name>.U", "<name>.W" and dense names.
ParamSet parameters(const SpredModel& m);
void assign(SpredModel& m, const ParamSet& params);
std::map<std::string, Tensor> effective_values(const SpredModel& m);

// L(U (.) W, V_d) + sum alpha ||U||^2 + beta ||W||^2 + dense decay, on the tape.
Var spred_objective(const SpredModel& m, Graph& g);

struct Evaluation {
  double value = 0.0;
  GradientMap grads;
};
Evaluation evaluate(const SpredModel& m);

// L(V, V_d) + sum 2 kappa R(V) + dense decay, evaluated at the given sparse values.
double l1_objective(const SpredModel& m, const std::map<std::string, Tensor>& V);
double base_loss_value(const SpredModel& m, const std::map<std::string, Tensor>& V);

enum class ThresholdMeasure { absolute, relative_to_max };

struct SparsifyPolicy {
  double loose = 1e-3;
  double tight = 1e-5;
  ThresholdMeasure measure = ThresholdMeasure::relative_to_max;
  // Relative mode measures against max(max|V|, reference). Training loops pass the
  // running peak of max|V| so a solution collapsing to zero is still detected.
  double reference = 0.0;

  void validate() const;
};

struct SparsifyResult {
  Tensor loose;
  Tensor tight;
  double sparsity_loose = 0.0;
  double sparsity_tight = 0.0;
};

SparsifyResult threshold_sparsify(const Tensor& V, const SparsifyPolicy& policy);
Tensor zero_below(const Tensor& V, double threshold, ThresholdMeasure measure, double reference = 0.0);
double zero_fraction(const Tensor& V);
// (zeros at loose threshold, zeros at tight threshold) over several tensors jointly.
std::pair<double, double> joint_sparsity(const std::vector<const Tensor*>& tensors, const SparsifyPolicy& policy);

using SparsityHistory = std::vector<std::pair<double, double>>;

// Loose and tight sparsities agree and have not moved over the trailing window.
bool converged_by_two_thresholds(std::span<const std::pair<double, double>> history, std::size_t window);
// Index where the trailing run of agreeing, constant entries begins.
std::optional<std::size_t> merge_index(std::span<const std::pair<double, double>> history);

}  // namespace spred
