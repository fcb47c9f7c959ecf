#include "spred/prune.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "spred/report.hpp"

namespace spred {

void PruneConfig::validate() const {
  train.validate();
  if (!(kappa >= 0)) throw std::invalid_argument("kappa must be nonnegative");
  for (double t : thresholds) {
    if (!(t >= 0)) throw std::invalid_argument("prune thresholds must be nonnegative");
  }
  if (thresholds.empty() && grid_points < 2) throw std::invalid_argument("threshold grid needs at least two points");
  if (!(plain_decay >= 0)) throw std::invalid_argument("plain decay must be nonnegative");
}

const PrunePoint* point_at_compression(const PruneCurve& curve, double ratio) {
  for (const auto& p : curve.points) {
    if (!p.degenerate && p.compression_ratio >= ratio) return &p;
  }
  return nullptr;
}

namespace {

using Masks = std::map<std::string, Tensor>;

// Cross-entropy on hadamard(W, mask) plus decay on the masked weights; returns
// the trained parameters with masked entries set to zero.
ParamSet train_masked(const MlpSpec& spec, ParamSet params, const Masks& masks, const data::LabeledData& data,
                      std::size_t steps, double decay, const OptimizerConfig& base) {
  OptimizerConfig ocfg = base;
  ocfg.kind = OptimizerKind::lbfgs;
  ocfg.lr = 1.0;
  ObjectiveFn objective = [&](const ParamSet& p, GradientMap& grads) {
    Graph g;
    std::map<std::string, Var> w;
    Var pen;
    for (const auto& [name, t] : p) {
      Var v = g.parameter(name, t);
      if (auto it = masks.find(name); it != masks.end()) {
        v = hadamard(v, g.constant(it->second));
        pen = pen ? pen + squared_norm(v) : squared_norm(v);
      }
      w.emplace(name, v);
    }
    Var loss = softmax_cross_entropy(mlp_forward(spec, g.constant(data.X), w), data.labels);
    if (decay > 0 && pen) loss = loss + scale(pen, decay);
    grads = g.backward(loss);
    return loss.value().item();
  };
  OptimizerState state(ocfg);
  for (std::size_t s = 0; s < steps; ++s) {
    if (lbfgs_step(params, objective, state).stationary) break;
  }
  for (const auto& [name, m] : masks) params.at(name) = hadamard(params.at(name), m);
  return params;
}

double test_accuracy(const MlpSpec& spec, const ParamSet& params, const data::LabeledData& test) {
  return accuracy(mlp_predict(spec, test.X, params), test.labels);
}

}  // namespace

SpredModel prune_model(const MlpSpec& spec, const data::LabeledData& train, const PruneConfig& cfg) {
  SpredModel m;
  for (std::size_t l = 0; l < spec.layers(); ++l) {
    const Shape shape{spec.widths[l], spec.widths[l + 1]};
    m.sparse.emplace(weight_name(l), make_spred_param(shape, cfg.kappa, SpredMode::elementwise, cfg.train.init,
                                                      cfg.train.seed + l, spec.widths[l]));
    if (spec.bias[l]) m.dense.emplace(bias_name(l), Tensor(Shape{spec.widths[l + 1]}, 0.0));
  }
  m.base_loss = [spec, X = train.X, y = train.labels](Graph& g, const ValueMap& v) {
    return softmax_cross_entropy(mlp_forward(spec, g.constant(X), v), y);
  };
  return m;
}

PruneCurve run_prune_finetune(const MlpSpec& spec, const data::LabeledData& train, const data::LabeledData& test,
                              const PruneConfig& cfg) {
  spec.validate();
  cfg.validate();
  if (train.X.cols() != spec.widths.front() || test.X.cols() != spec.widths.front()) {
    throw ShapeError("data width does not match the network input");
  }
  if (train.classes > spec.widths.back() || test.classes > spec.widths.back()) {
    throw ShapeError("network has fewer outputs than classes");
  }

  PruneCurve curve;
  SolveReport& report = curve.report;
  Stopwatch clock;

  SpredModel m = prune_model(spec, train, cfg);
  ParamSet init;
  for (const auto& [name, p] : m.sparse) init.emplace(name, effective_value(p));
  for (const auto& [name, t] : m.dense) init.emplace(name, t);

  report = train_spred(m, cfg.train, "prune");
  report.config["kappa"] = format_double(cfg.kappa);
  report.config["finetune_steps"] = std::to_string(cfg.finetune_steps);
  report.config["retrain_steps"] = std::to_string(cfg.retrain_steps);
  if (report.aborted) return curve;
  report.timings["spred"] = report.timings["train"];

  ParamSet trained;
  for (const auto& [name, V] : effective_values(m)) trained.emplace(name, V);
  for (const auto& [name, t] : m.dense) trained.emplace(name, t);
  double vmax = 0.0;
  for (const auto& [name, p] : m.sparse) {
    vmax = std::max(vmax, trained.at(name).abs_max());
    curve.total_weights += trained.at(name).size();
  }
  std::size_t dense_count = 0;
  for (const auto& [name, t] : m.dense) dense_count += t.size();
  curve.unpruned_accuracy = test_accuracy(spec, trained, test);

  {
    Masks all;
    for (const auto& [name, p] : m.sparse) all.emplace(name, Tensor(trained.at(name).shape(), 1.0));
    Stopwatch dense_clock;
    const ParamSet dense = train_masked(spec, init, all, train, cfg.retrain_steps, cfg.plain_decay, cfg.train.optimizer);
    curve.dense_accuracy = test_accuracy(spec, dense, test);
    report.timings["dense"] = dense_clock.seconds();
  }

  std::vector<double> grid = cfg.thresholds;
  if (grid.empty()) {
    grid.push_back(0.0);
    const double lo = std::log(1e-6), hi = std::log(0.5);
    for (std::size_t i = 0; i < cfg.grid_points; ++i) {
      grid.push_back(std::exp(lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(cfg.grid_points - 1)));
    }
  }
  std::sort(grid.begin(), grid.end());

  Stopwatch sweep_clock;
  for (double t : grid) {
    PrunePoint pt;
    pt.threshold = t;
    Masks masks;
    ParamSet pruned = trained;
    for (const auto& [name, p] : m.sparse) {
      const Tensor& V = trained.at(name);
      Tensor mask(V.shape(), 0.0);
      for (std::size_t i = 0; i < V.size(); ++i) {
        if (t == 0.0 || std::abs(V[i]) > t * vmax) {
          mask[i] = 1.0;
          ++pt.kept;
        }
      }
      pruned.at(name) = hadamard(V, mask);
      masks.emplace(name, std::move(mask));
    }
    pt.pruned_accuracy = test_accuracy(spec, pruned, test);
    pt.compression_ratio = pt.kept + dense_count == 0
                               ? std::numeric_limits<double>::infinity()
                               : static_cast<double>(curve.total_weights + dense_count) /
                                     static_cast<double>(pt.kept + dense_count);
    if (pt.kept == 0) {
      pt.degenerate = true;
      pt.finetuned_accuracy = pt.mask_at_init_accuracy = pt.pruned_accuracy;
    } else {
      const ParamSet tuned = train_masked(spec, pruned, masks, train, cfg.finetune_steps, cfg.plain_decay, cfg.train.optimizer);
      pt.finetuned_accuracy = test_accuracy(spec, tuned, test);
      const ParamSet lottery = train_masked(spec, init, masks, train, cfg.retrain_steps, cfg.plain_decay, cfg.train.optimizer);
      pt.mask_at_init_accuracy = test_accuracy(spec, lottery, test);
    }
    curve.points.push_back(pt);
  }
  report.timings["sweep"] = sweep_clock.seconds();
  report.timings["total"] = clock.seconds();

  for (const auto& p : curve.points) {
    report.series["threshold"].push_back(p.threshold);
    report.series["kept"].push_back(static_cast<double>(p.kept));
    report.series["compression_ratio"].push_back(p.degenerate ? 0.0 : p.compression_ratio);
    report.series["pruned_accuracy"].push_back(p.pruned_accuracy);
    report.series["finetuned_accuracy"].push_back(p.finetuned_accuracy);
    report.series["mask_at_init_accuracy"].push_back(p.mask_at_init_accuracy);
    report.series["degenerate"].push_back(p.degenerate ? 1.0 : 0.0);
  }
  report.metrics["dense_accuracy"] = curve.dense_accuracy;
  report.metrics["unpruned_accuracy"] = curve.unpruned_accuracy;
  report.metrics["total_weights"] = static_cast<double>(curve.total_weights);
  if (const PrunePoint* p10 = point_at_compression(curve, 10.0)) {
    report.metrics["cr10_compression_ratio"] = p10->compression_ratio;
    report.metrics["cr10_finetuned_accuracy"] = p10->finetuned_accuracy;
    report.metrics["cr10_mask_at_init_accuracy"] = p10->mask_at_init_accuracy;
  }
  return curve;
}

}  // namespace spred
