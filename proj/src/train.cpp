#include <algorithm>
#include <charconv>
#include "spred/train.hpp"

#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace spred {

namespace {

std::string num(double v) {
  char buf[64];
  return std::string(buf, std::to_chars(buf, buf + sizeof buf, v).ptr);
}

}  // namespace

void TrainConfig::validate() const {
  optimizer.validate();
  thresholds.validate();
  if (window == 0) throw std::invalid_argument("convergence window must be positive");
  if (record_every == 0) throw std::invalid_argument("record_every must be positive");
  if (!(objective_tol >= 0)) throw std::invalid_argument("objective tolerance must be nonnegative");
}

std::map<std::string, std::string> TrainConfig::echo() const {
  return {
      {"optimizer", std::string(to_string(optimizer.kind))},
      {"lr", num(optimizer.lr)},
      {"momentum", num(optimizer.momentum)},
      {"max_steps", std::to_string(max_steps)},
      {"batch_size", std::to_string(batch_size)},
      {"threshold_loose", num(thresholds.loose)},
      {"threshold_tight", num(thresholds.tight)},
      {"threshold_measure", thresholds.measure == ThresholdMeasure::absolute ? "absolute" : "relative"},
      {"init", std::string(to_string(init))},
      {"seed", std::to_string(seed)},
      {"window", std::to_string(window)},
      {"objective_tol", num(objective_tol)},
  };
}

double max_balance_gap(const SpredModel& m) {
  double gap = 0.0;
  for (const auto& [name, p] : m.sparse) gap = std::max(gap, balance_gap(p));
  return gap;
}

SolveReport train_spred(SpredModel& m, const TrainConfig& cfg, const std::string& task, const StepHook& hook) {
  cfg.validate();
  SolveReport report;
  report.task = task;
  report.seed = cfg.seed;
  report.config = cfg.echo();
  Stopwatch clock;

  OptimizerState state(cfg.optimizer);
  ParamSet params = parameters(m);

  // Single-entry cache so the recorded evaluation doubles as the first L-BFGS evaluation.
  std::vector<double> cached_at;
  Evaluation cached;
  auto eval_at = [&](const ParamSet& p) -> const Evaluation& {
    auto flat = flatten(p);
    if (flat != cached_at) {
      assign(m, p);
      cached = evaluate(m);
      cached_at = std::move(flat);
    }
    return cached;
  };
  ObjectiveFn objective = [&](const ParamSet& p, GradientMap& g) {
    const auto& ev = eval_at(p);
    g = ev.grads;
    return ev.value;
  };

  SparsifyPolicy policy = cfg.thresholds;
  double peak = 0.0;
  SparsityHistory history;
  std::vector<double> objectives;
  std::size_t step = 0;
  bool stalled = false;
  for (;; ++step) {
    const Evaluation& ev = eval_at(params);
    assign(m, params);
    const auto V = effective_values(m);
    std::vector<const Tensor*> ptrs;
    for (const auto& [name, v] : V) {
      peak = std::max(peak, v.abs_max());
      ptrs.push_back(&v);
    }
    policy.reference = peak;
    const auto sp = joint_sparsity(ptrs, policy);
    const double f = ev.value;
    if (!std::isfinite(f)) {
      report.aborted = true;
      std::ostringstream ss;
      ss << "non-finite objective at step " << step << " (optimizer " << to_string(cfg.optimizer.kind)
         << ", lr " << cfg.optimizer.lr << "); reduce the learning rate";
      report.diagnosis = ss.str();
      break;
    }
    history.push_back(sp);
    objectives.push_back(f);
    if (step % cfg.record_every == 0 || hook) {
      const TraceRow row{step, f, sp.first, sp.second, max_balance_gap(m)};
      if (step % cfg.record_every == 0) report.trace.push_back(row);
      if (hook) hook(row);
    }
    if (history.size() >= cfg.window) {
      const double first = objectives[objectives.size() - cfg.window];
      const bool flat = std::abs(first - f) <= cfg.objective_tol * std::max(1.0, std::abs(f));
      if (flat && converged_by_two_thresholds(history, cfg.window)) {
        report.converged = true;
        report.merge_step = merge_index(history);
        break;
      }
      if (flat && std::all_of(history.end() - static_cast<std::ptrdiff_t>(cfg.window), history.end(),
                              [&](const auto& h) { return h == sp; })) {
        // Objective and both sparsities frozen without merging.
        stalled = true;
        break;
      }
    }
    if (step == cfg.max_steps) break;
    if (cfg.optimizer.kind == OptimizerKind::lbfgs) {
      if (lbfgs_step(params, objective, state).stationary) {
        // No descent along either direction: more steps cannot change the iterate.
        stalled = true;
        break;
      }
    } else {
      GradientMap g = ev.grads;
      first_order_step(params, g, state);
    }
  }
  if (!report.trace.empty() && report.trace.back().step != step && !report.aborted) {
    const auto& sp = history.back();
    report.trace.push_back({step, objectives.back(), sp.first, sp.second, max_balance_gap(m)});
  }
  report.steps = step;
  if (stalled && !report.converged) {
    std::ostringstream ss;
    ss << "stalled at step " << step << " with loose/tight sparsity " << history.back().first << "/"
       << history.back().second << " unmerged; entries between the thresholds";
    report.diagnosis = ss.str();
  }
  report.timings["train"] = clock.seconds();
  if (report.aborted) return report;

  assign(m, params);
  std::map<std::string, Tensor> sparsified;
  for (const auto& [name, v] : effective_values(m)) sparsified.emplace(name, threshold_sparsify(v, policy).tight);
  report.params = sparsified;
  for (const auto& [name, v] : m.dense) report.params.emplace(name, v);
  report.balance_gap = max_balance_gap(m);
  report.metrics["objective"] = objectives.back();
  report.metrics["l1_objective"] = l1_objective(m, sparsified);
  report.metrics["base_loss"] = base_loss_value(m, sparsified);
  report.metrics["sparsity_loose"] = history.back().first;
  report.metrics["sparsity_tight"] = history.back().second;
  report.metrics["threshold_reference"] = peak;
  report.metrics["stalled"] = stalled ? 1.0 : 0.0;
  if (report.merge_step) report.metrics["merge_step"] = static_cast<double>(*report.merge_step);
  return report;
}

SolveReport best_over_learning_rates(const std::vector<double>& lrs, const TrainConfig& cfg,
                                     const std::function<SolveReport(const TrainConfig&)>& run,
                                     const std::string& metric) {
  if (lrs.empty()) throw std::invalid_argument("learning-rate grid is empty");
  std::optional<SolveReport> best;
  SolveReport last_failure;
  for (double lr : lrs) {
    TrainConfig c = cfg;
    c.optimizer.lr = lr;
    SolveReport r = run(c);
    r.metrics["lr"] = lr;
    if (r.aborted || !r.metrics.count(metric) || !std::isfinite(r.metrics.at(metric))) {
      last_failure = std::move(r);
      continue;
    }
    // Ties go to the run that converged, then to the earlier (larger) rate.
    const bool better = !best || r.metrics.at(metric) < best->metrics.at(metric) - 1e-12 * std::abs(best->metrics.at(metric)) ||
                        (!best->converged && r.converged &&
                         r.metrics.at(metric) <= best->metrics.at(metric) + 1e-12 * std::abs(best->metrics.at(metric)));
    if (better) best = std::move(r);
  }
  if (!best) {
    last_failure.diagnosis = "every learning rate diverged; last: " + last_failure.diagnosis;
    return last_failure;
  }
  return *best;
}

}  // namespace spred
