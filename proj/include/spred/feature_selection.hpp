#pragma once

#include <cstdint>
#include <string_view>
#include <vector>

#include "spred/data.hpp"
#include "spred/mlp.hpp"
#include "spred/train.hpp"

namespace spred {

enum class Nonlinearity { linear, xor_like, mixed };
Nonlinearity parse_nonlinearity(std::string_view name);
std::string_view to_string(Nonlinearity kind);

struct FeatureSelectionTask {
  data::LabeledData data;
  std::vector<std::size_t> support;  // sorted; empty when unknown
  data::Split split;                 // 0.6 / 0.2 / 0.2
};

// X is N(0, 1) [N x d]. Scores over k_true random support features use
// weights +-(0.5 + U(0, 1)):
//   linear    sum a_j x_j
//   xor_like  sum over consecutive support pairs a_j x_j x_j'
//   mixed     first half linear, second half a_j x_j |x_j|
// Two classes take the sign of one score; more classes take the argmax of one
// score per class. Rows whose winning score beats the runner-up (or zero) by
// no more than margin * std(score) are redrawn, then each label is moved to a
// different random class with probability label_noise. Weights and X are
// redrawn until every class count is within 10% of N / classes.
struct FeatureTaskOptions {
  std::size_t classes = 2;
  double margin = 0.0;
  double label_noise = 0.0;
};
FeatureSelectionTask gen_feature_selection(std::size_t N, std::size_t d, std::size_t k_true, Nonlinearity kind,
                                           std::uint64_t seed, const FeatureTaskOptions& options = {});
FeatureSelectionTask make_feature_selection_task(data::LabeledData data, std::uint64_t seed);

enum class FeatureModel {
  ensemble,           // shared spred mask U in front of a linear head and an MLP head
  independent_masks,  // one mask per head (ablation)
  mlp_weight_decay,   // MLP on all features, kappa ||W||^2
  mlp_l1              // MLP, kappa ||W1||_1 by subgradient plus kappa ||W||^2 on later layers
};
FeatureModel parse_feature_model(std::string_view name);
std::string_view to_string(FeatureModel model);

struct FeatureSelectionConfig {
  TrainConfig train;  // optimizer, step budget, thresholds, seed
  std::vector<std::size_t> hidden{32, 32};
  Activation activation = Activation::relu;
  std::vector<double> kappa_grid{7e-1, 5e-1, 3e-1, 1e-1, 5e-2, 3e-2, 1e-2};
  std::vector<double> lr_grid;  // empty: train.optimizer.lr alone
  // Dev accuracy is checked every `eval_every` steps; training stops after
  // `patience` checks without an increase.
  std::size_t eval_every = 10;
  std::size_t patience = 10;

  void validate() const;
};

ParamSet init_feature_params(FeatureModel model, std::size_t d, std::size_t classes, const FeatureSelectionConfig& cfg);
// Training objective at `params`: the head cross-entropies plus kappa times the
// model's penalty. Fills `grads` when given.
double feature_objective(FeatureModel model, const FeatureSelectionConfig& cfg, const data::LabeledData& data,
                         double kappa, const ParamSet& params, GradientMap* grads = nullptr);

// One training run at a fixed kappa and cfg.train.optimizer.lr. Accuracies are
// measured after zeroing the features below the tight threshold.
SolveReport fit_feature_model(const FeatureSelectionTask& task, FeatureModel model, double kappa,
                              const FeatureSelectionConfig& cfg);

// Tunes kappa and lr on dev accuracy (ties go to the larger kappa) and reports
// the chosen run with test accuracy and, for synthetic tasks, support F1.
SolveReport run_feature_selection(const FeatureSelectionTask& task, FeatureModel model,
                                  const FeatureSelectionConfig& cfg);

double support_f1(const std::vector<std::size_t>& selected, const std::vector<std::size_t>& truth);

}  // namespace spred
