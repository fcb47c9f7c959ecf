#pragma once

#include <vector>

#include "spred/data.hpp"
#include "spred/mlp.hpp"
#include "spred/train.hpp"

namespace spred {

struct PruneConfig {
  TrainConfig train;  // spred phase: optimizer, step budget, seed
  double kappa = 1e-3;
  // Cutoffs on |V| relative to max |V|, 0 keeping every weight; empty selects `grid_points` log-spaced
  // values from 1e-6 to 0.5 with 0 prepended.
  std::vector<double> thresholds;
  std::size_t grid_points = 12;
  // Masked retraining: L-BFGS on cross-entropy plus plain_decay ||W||^2.
  std::size_t finetune_steps = 300;
  std::size_t retrain_steps = 1000;
  double plain_decay = 1e-5;

  void validate() const;
};

struct PrunePoint {
  double threshold = 0.0;  // relative to max |V|
  std::size_t kept = 0;
  double compression_ratio = 1.0;  // all parameters / remaining parameters, biases never pruned
  double pruned_accuracy = 0.0;    // thresholded, before finetuning
  double finetuned_accuracy = 0.0;
  double mask_at_init_accuracy = 0.0;  // same mask on the initial weights, retrained
  bool degenerate = false;             // every weight removed
};

struct PruneCurve {
  std::vector<PrunePoint> points;  // ascending threshold
  double dense_accuracy = 0.0;     // plain MLP, no sparsity, same retraining budget
  double unpruned_accuracy = 0.0;  // spred-trained model before thresholding
  std::size_t total_weights = 0;  // prunable weights
  SolveReport report;
};

// Every weight matrix as an elementwise spred parameter, biases dense; the base
// loss is mean cross-entropy on `train`.
SpredModel prune_model(const MlpSpec& spec, const data::LabeledData& train, const PruneConfig& cfg);

// Trains the classifier with every weight matrix factored as U (.) W (biases
// dense), sweeps the thresholds, and for each mask finetunes the surviving
// weights and retrains them from the initialization.
PruneCurve run_prune_finetune(const MlpSpec& spec, const data::LabeledData& train, const data::LabeledData& test,
                              const PruneConfig& cfg);

// First point at or above the compression ratio, if any.
const PrunePoint* point_at_compression(const PruneCurve& curve, double ratio);

}  // namespace spred
