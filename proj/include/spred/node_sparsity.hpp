#pragma once

#include <vector>

#include "spred/data.hpp"
#include "spred/mlp.hpp"
#include "spred/train.hpp"

namespace spred {

struct NodeSparsityConfig {
  // Optimizer, step budget and seed. Training stops early when the objective
  // moves by less than train.objective_tol (relative) over train.window steps.
  TrainConfig train;
  // A hidden unit is dead when the mean |w| of its outgoing weights is below
  // the cutoff; weight sparsity counts single weights below it.
  double cutoff = 1e-4;
  // Grid points train independently; results do not depend on the count.
  std::size_t threads = 1;

  void validate() const;
};

struct NodeSparsityPoint {
  double kappa = 0.0;
  double node_sparsity = 0.0;
  double weight_sparsity = 0.0;
  double train_accuracy = 0.0;
  double objective = 0.0;
  std::size_t steps = 0;
  std::vector<double> a_norms;  // outgoing weight norm per hidden unit (row of W2)
  std::vector<double> b_norms;  // incoming weight norm per hidden unit (column of W1)
};

struct NodeSparsitySweep {
  std::vector<NodeSparsityPoint> points;  // in grid order
  double pearson = 0.0;                   // node vs weight sparsity across the grid
  std::size_t inversions = 0;             // decreases of node sparsity along ascending kappa
  SolveReport report;
};

// f(x) = sigma(x W1) W2 with no biases, trained on mean cross-entropy plus
// kappa (||W1||^2 + ||W2||^2). Throws std::invalid_argument unless `spec` has
// exactly two bias-free layers.
NodeSparsitySweep run_node_sparsity_sweep(const MlpSpec& spec, const data::LabeledData& data,
                                          const std::vector<double>& kappa_grid, const NodeSparsityConfig& cfg);

// Mean cross-entropy plus kappa (||W1||^2 + ||W2||^2). Fills `grads` when given.
double node_sparsity_objective(const MlpSpec& spec, const data::LabeledData& data, double kappa, const ParamSet& params,
                               GradientMap* grads = nullptr);

double node_sparsity(const Tensor& W2, double cutoff);
double weight_sparsity(const std::vector<const Tensor*>& weights, double cutoff);
double pearson_correlation(const std::vector<double>& x, const std::vector<double>& y);
// Number of adjacent decreases in `values`.
std::size_t count_inversions(const std::vector<double>& values);

}  // namespace spred
