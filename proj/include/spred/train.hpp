#pragma once

#include <chrono>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "spred/optim.hpp"
#include "spred/spred.hpp"

namespace spred {

struct TrainConfig {
  OptimizerConfig optimizer;
  std::size_t max_steps = 20000;
  std::size_t batch_size = 0;  // 0: full batch
  SparsifyPolicy thresholds;
  InitScheme init = InitScheme::sqrt_standard;
  std::uint64_t seed = 0;
  // Two-threshold rule: sparsities agree and stay fixed for `window` steps while
  // the objective moves by less than objective_tol (relative) across the window.
  std::size_t window = 100;
  double objective_tol = 1e-12;
  std::size_t record_every = 1;

  void validate() const;
  std::map<std::string, std::string> echo() const;
};

struct TraceRow {
  std::size_t step = 0;
  double objective = 0.0;
  double sparsity_loose = 0.0;
  double sparsity_tight = 0.0;
  double balance_gap = 0.0;
  friend bool operator==(const TraceRow&, const TraceRow&) = default;
};

struct SolveReport {
  std::string task;
  std::uint64_t seed = 0;
  std::map<std::string, std::string> config;
  std::map<std::string, Tensor> params;  // recovered effective parameters, thresholded at the tight level
  std::vector<TraceRow> trace;
  std::map<std::string, double> metrics;
  std::map<std::string, double> timings;  // seconds per phase
  std::map<std::string, std::vector<double>> series;
  std::size_t steps = 0;
  bool converged = false;
  std::optional<std::size_t> merge_step;
  double balance_gap = 0.0;
  bool aborted = false;
  std::string diagnosis;

  friend bool operator==(const SolveReport&, const SolveReport&) = default;
};

class Stopwatch {
 public:
  Stopwatch() : start_(std::chrono::steady_clock::now()) {}
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_;
};

// Largest |U_i| - |W_i| (or |u| - ||W||) gap over every sparse parameter.
double max_balance_gap(const SpredModel& m);

// Sees every step, recorded or not. May throw to end the run early.
using StepHook = std::function<void(const TraceRow&)>;

// Full-batch minimization of the spred objective. Stops on the two-threshold
// rule or the step budget; a non-finite objective aborts the run.
SolveReport train_spred(SpredModel& m, const TrainConfig& cfg, const std::string& task, const StepHook& hook = {});

// Runs `run` at each learning rate and keeps the finite run with the lowest
// value of `metric`.
SolveReport best_over_learning_rates(const std::vector<double>& lrs, const TrainConfig& cfg,
                                     const std::function<SolveReport(const TrainConfig&)>& run,
                                     const std::string& metric = "l1_objective");

}  // namespace spred
