#include "spred/node_sparsity.hpp"

#include <algorithm>
#include <atomic>
#include <exception>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "spred/report.hpp"

namespace spred {

void NodeSparsityConfig::validate() const {
  train.validate();
  if (!(cutoff > 0)) throw std::invalid_argument("node sparsity cutoff must be positive");
  if (threads == 0) throw std::invalid_argument("node sparsity needs at least one thread");
}

double node_sparsity(const Tensor& W2, double cutoff) {
  if (W2.rank() != 2 || W2.rows() == 0) throw ShapeError("node_sparsity: W2 must be [hidden x out]");
  std::size_t dead = 0;
  for (std::size_t j = 0; j < W2.rows(); ++j) {
    double s = 0.0;
    for (std::size_t k = 0; k < W2.cols(); ++k) s += std::abs(W2(j, k));
    if (s / static_cast<double>(W2.cols()) < cutoff) ++dead;
  }
  return static_cast<double>(dead) / static_cast<double>(W2.rows());
}

double weight_sparsity(const std::vector<const Tensor*>& weights, double cutoff) {
  std::size_t small = 0, total = 0;
  for (const Tensor* w : weights) {
    for (double v : w->values()) small += std::abs(v) < cutoff ? 1 : 0;
    total += w->size();
  }
  return total == 0 ? 0.0 : static_cast<double>(small) / static_cast<double>(total);
}

double pearson_correlation(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) throw std::invalid_argument("pearson needs two equal series of length >= 2");
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return std::numeric_limits<double>::quiet_NaN();
  return sxy / std::sqrt(sxx * syy);
}

std::size_t count_inversions(const std::vector<double>& values) {
  std::size_t n = 0;
  for (std::size_t i = 1; i < values.size(); ++i) n += values[i] < values[i - 1] ? 1 : 0;
  return n;
}

double node_sparsity_objective(const MlpSpec& spec, const data::LabeledData& data, double kappa, const ParamSet& params,
                               GradientMap* grads) {
  Graph g;
  std::map<std::string, Var> w;
  for (const auto& [name, t] : params) w.emplace(name, g.parameter(name, t));
  Var loss = softmax_cross_entropy(mlp_forward(spec, g.constant(data.X), w), data.labels);
  if (kappa > 0) loss = loss + scale(squared_norm(w.at("W1")) + squared_norm(w.at("W2")), kappa);
  if (grads) *grads = g.backward(loss);
  return loss.value().item();
}

namespace {

NodeSparsityPoint train_point(const MlpSpec& spec, const data::LabeledData& data, double kappa,
                              const NodeSparsityConfig& cfg, bool& aborted, std::string& diagnosis) {
  ParamSet params = init_mlp(spec, cfg.train.seed);
  ObjectiveFn objective = [&](const ParamSet& p, GradientMap& grads) {
    return node_sparsity_objective(spec, data, kappa, p, &grads);
  };
  OptimizerState state(cfg.train.optimizer);
  std::vector<double> f_hist;
  std::size_t step = 0;
  for (; step < cfg.train.max_steps; ++step) {
    double f;
    if (cfg.train.optimizer.kind == OptimizerKind::lbfgs) {
      const auto r = lbfgs_step(params, objective, state);
      f = r.value_after;
      if (r.stationary) break;
    } else {
      GradientMap grads;
      f = objective(params, grads);
      first_order_step(params, grads, state);
    }
    if (!std::isfinite(f)) {
      aborted = true;
      std::ostringstream ss;
      ss << "non-finite objective at kappa " << kappa << ", step " << step << " (lr " << cfg.train.optimizer.lr << ")";
      diagnosis = ss.str();
      break;
    }
    f_hist.push_back(f);
    if (f_hist.size() > cfg.train.window) {
      const double first = f_hist[f_hist.size() - 1 - cfg.train.window];
      if (std::abs(first - f) <= cfg.train.objective_tol * std::max(1.0, std::abs(f))) {
        ++step;
        break;
      }
    }
  }
  NodeSparsityPoint pt;
  pt.kappa = kappa;
  pt.steps = step;
  const Tensor& W1 = params.at("W1");
  const Tensor& W2 = params.at("W2");
  pt.node_sparsity = node_sparsity(W2, cfg.cutoff);
  pt.weight_sparsity = weight_sparsity({&W1, &W2}, cfg.cutoff);
  pt.train_accuracy = accuracy(mlp_predict(spec, data.X, params), data.labels);
  GradientMap unused;
  pt.objective = objective(params, unused);
  for (std::size_t j = 0; j < W2.rows(); ++j) {
    pt.a_norms.push_back(W2.row(j).norm());
    pt.b_norms.push_back(W1.col(j).norm());
  }
  return pt;
}

}  // namespace

NodeSparsitySweep run_node_sparsity_sweep(const MlpSpec& spec, const data::LabeledData& data,
                                          const std::vector<double>& kappa_grid, const NodeSparsityConfig& cfg) {
  spec.validate();
  cfg.validate();
  if (spec.layers() != 2 || spec.bias[0] || spec.bias[1]) {
    throw std::invalid_argument("node sparsity sweep needs a two-layer network without biases");
  }
  if (spec.activations[1] != Activation::identity) throw std::invalid_argument("the output layer must be linear");
  if (data.X.rank() != 2 || data.X.cols() != spec.widths[0] || data.classes != spec.widths[2]) {
    throw ShapeError("dataset does not match the network widths");
  }
  if (kappa_grid.size() < 2) throw std::invalid_argument("node sparsity sweep needs at least two kappas");
  for (double k : kappa_grid) {
    if (!(k >= 0)) throw std::invalid_argument("kappa must be nonnegative");
  }

  NodeSparsitySweep sweep;
  SolveReport& report = sweep.report;
  report.task = "node-sparsity";
  report.seed = cfg.train.seed;
  report.config = cfg.train.echo();
  report.config["hidden"] = std::to_string(spec.widths[1]);
  report.config["activation"] = std::string(to_string(spec.activations[0]));
  report.config["cutoff"] = format_double(cfg.cutoff);
  Stopwatch clock;
  const std::size_t n = kappa_grid.size();
  std::vector<NodeSparsityPoint> points(n);
  std::vector<char> failed(n, 0);
  std::vector<std::string> diagnoses(n);
  std::vector<std::exception_ptr> errors(n);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i; (i = next.fetch_add(1)) < n;) {
      try {
        bool aborted = false;
        points[i] = train_point(spec, data, kappa_grid[i], cfg, aborted, diagnoses[i]);
        failed[i] = aborted ? 1 : 0;
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const std::size_t threads = std::min(cfg.threads, n);
  if (threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (errors[i]) std::rethrow_exception(errors[i]);
    if (failed[i]) {
      report.aborted = true;
      report.diagnosis = diagnoses[i];
      return sweep;
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    auto& pt = points[i];
    report.series["a_norms_" + std::to_string(i)] = pt.a_norms;
    report.series["b_norms_" + std::to_string(i)] = pt.b_norms;
    report.steps += pt.steps;
    sweep.points.push_back(std::move(pt));
  }
  report.timings["train"] = clock.seconds();

  std::vector<std::size_t> order(sweep.points.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return sweep.points[a].kappa < sweep.points[b].kappa; });
  std::vector<double> nodes, weights;
  for (auto i : order) {
    nodes.push_back(sweep.points[i].node_sparsity);
    weights.push_back(sweep.points[i].weight_sparsity);
  }
  sweep.inversions = count_inversions(nodes);
  sweep.pearson = pearson_correlation(nodes, weights);
  for (const auto& p : sweep.points) {
    report.series["kappa"].push_back(p.kappa);
    report.series["node_sparsity"].push_back(p.node_sparsity);
    report.series["weight_sparsity"].push_back(p.weight_sparsity);
    report.series["train_accuracy"].push_back(p.train_accuracy);
    report.series["objective"].push_back(p.objective);
  }
  report.metrics["pearson"] = sweep.pearson;
  report.metrics["inversions"] = static_cast<double>(sweep.inversions);
  report.metrics["node_sparsity_min_kappa"] = nodes.front();
  report.metrics["node_sparsity_max_kappa"] = nodes.back();
  report.converged = true;
  return sweep;
}

}  // namespace spred
