#include "spred/feature_selection.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <iterator>
#include <limits>
#include <optional>
#include <sstream>
#include <stdexcept>

#include "spred/random.hpp"
#include "spred/report.hpp"

namespace spred {

Nonlinearity parse_nonlinearity(std::string_view name) {
  if (name == "linear") return Nonlinearity::linear;
  if (name == "xor_like" || name == "xor-like" || name == "xor") return Nonlinearity::xor_like;
  if (name == "mixed") return Nonlinearity::mixed;
  throw std::invalid_argument("unknown nonlinearity '" + std::string(name) + "'");
}

std::string_view to_string(Nonlinearity kind) {
  switch (kind) {
    case Nonlinearity::linear: return "linear";
    case Nonlinearity::xor_like: return "xor_like";
    case Nonlinearity::mixed: return "mixed";
  }
  return "?";
}

FeatureModel parse_feature_model(std::string_view name) {
  if (name == "ensemble" || name == "spred") return FeatureModel::ensemble;
  if (name == "independent" || name == "independent_masks") return FeatureModel::independent_masks;
  if (name == "mlp_wd" || name == "wd") return FeatureModel::mlp_weight_decay;
  if (name == "mlp_l1" || name == "l1") return FeatureModel::mlp_l1;
  throw std::invalid_argument("unknown feature model '" + std::string(name) + "'");
}

std::string_view to_string(FeatureModel model) {
  switch (model) {
    case FeatureModel::ensemble: return "ensemble";
    case FeatureModel::independent_masks: return "independent_masks";
    case FeatureModel::mlp_weight_decay: return "mlp_wd";
    case FeatureModel::mlp_l1: return "mlp_l1";
  }
  return "?";
}

FeatureSelectionTask gen_feature_selection(std::size_t N, std::size_t d, std::size_t k_true, Nonlinearity kind,
                                           std::uint64_t seed, const FeatureTaskOptions& options) {
  const std::size_t classes = options.classes;
  const double margin = options.margin;
  if (!(margin >= 0 && margin < 3)) throw std::invalid_argument("margin must lie in [0, 3)");
  if (!(options.label_noise >= 0 && options.label_noise < 1)) throw std::invalid_argument("label noise must lie in [0, 1)");
  if (d == 0 || N < 5) throw std::invalid_argument("feature selection needs d >= 1 and N >= 5");
  if (k_true == 0 || k_true > d) throw std::invalid_argument("k_true must lie in [1, d]");
  if (classes < 2 || classes > N / 2) throw std::invalid_argument("feature selection needs 2 <= classes <= N / 2");
  Rng rng(seed);
  std::vector<std::size_t> perm(d);
  for (std::size_t i = 0; i < d; ++i) perm[i] = i;
  std::shuffle(perm.begin(), perm.end(), rng);
  std::vector<std::size_t> support(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(k_true));
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  const std::size_t heads = classes == 2 ? 1 : classes;

  auto score = [&](const Tensor& X, std::size_t i, const std::vector<double>& a) {
    auto x = [&](std::size_t j) { return X(i, support[j]); };
    double s = 0.0;
    switch (kind) {
      case Nonlinearity::linear:
        for (std::size_t j = 0; j < k_true; ++j) s += a[j] * x(j);
        break;
      case Nonlinearity::xor_like:
        for (std::size_t j = 0; j + 1 < k_true; j += 2) s += a[j] * x(j) * x(j + 1);
        if (k_true % 2 == 1) s += a[k_true - 1] * x(k_true - 1);
        break;
      case Nonlinearity::mixed: {
        const std::size_t half = (k_true + 1) / 2;
        for (std::size_t j = 0; j < half; ++j) s += a[j] * x(j);
        for (std::size_t j = half; j < k_true; ++j) s += a[j] * x(j) * std::abs(x(j));
        break;
      }
    }
    return s;
  };

  constexpr int kMaxDraws = 1000;
  const double lo = 0.9 * static_cast<double>(N) / static_cast<double>(classes);
  const double hi = 1.1 * static_cast<double>(N) / static_cast<double>(classes);
  for (int draw = 0; draw < kMaxDraws; ++draw) {
    std::vector<std::vector<double>> a(heads, std::vector<double>(k_true));
    for (auto& row : a)
      for (auto& v : row) v = (unif(rng) < 0.5 ? -1.0 : 1.0) * (0.5 + unif(rng));
    double var = 0.0;
    for (std::size_t j = 0; j < k_true; ++j) {
      const bool cubic = kind == Nonlinearity::mixed && j >= (k_true + 1) / 2;
      const bool paired_out = kind == Nonlinearity::xor_like && j % 2 == 1 && j + 1 <= k_true - (k_true % 2);
      if (!paired_out) var += a[0][j] * a[0][j] * (cubic ? 3.0 : 1.0);
    }
    const double cut = margin * std::sqrt(var);
    std::normal_distribution<double> normal(0.0, 1.0);
    Tensor X(Shape{N, d});
    std::vector<std::size_t> labels(N), counts(classes, 0);
    for (std::size_t i = 0; i < N; ++i) {
      // Rows closer than the margin to a class boundary are redrawn.
      for (;;) {
        for (std::size_t j = 0; j < d; ++j) X(i, j) = normal(rng);
        double gap;
        if (heads == 1) {
          const double s = score(X, i, a[0]);
          labels[i] = s > 0 ? 1 : 0;
          gap = std::abs(s);
        } else {
          double best = -std::numeric_limits<double>::infinity(), second = best;
          for (std::size_t c = 0; c < classes; ++c) {
            const double s = score(X, i, a[c]);
            if (s > best) {
              second = best;
              best = s;
              labels[i] = c;
            } else if (s > second) {
              second = s;
            }
          }
          gap = best - second;
        }
        if (gap > cut || cut == 0.0) break;
      }
      if (options.label_noise > 0 && unif(rng) < options.label_noise) {
        labels[i] = (labels[i] + 1 + static_cast<std::size_t>(unif(rng) * static_cast<double>(classes - 1))) % classes;
      }
      ++counts[labels[i]];
    }
    if (std::any_of(counts.begin(), counts.end(), [&](std::size_t n) {
          return static_cast<double>(n) < lo || static_cast<double>(n) > hi;
        })) {
      continue;
    }
    FeatureSelectionTask t;
    t.data.X = std::move(X);
    t.data.labels = std::move(labels);
    t.data.classes = classes;
    std::sort(support.begin(), support.end());
    t.support = support;
    t.split = data::split_indices(N, 0.6, 0.2, seed + 1);
    return t;
  }
  throw std::runtime_error("could not draw a class-balanced feature selection task in " + std::to_string(kMaxDraws) +
                           " attempts");
}

FeatureSelectionTask make_feature_selection_task(data::LabeledData data, std::uint64_t seed) {
  if (data.samples() < 5) throw std::invalid_argument("feature selection needs at least 5 samples");
  FeatureSelectionTask t;
  t.split = data::split_indices(data.samples(), 0.6, 0.2, seed);
  t.data = std::move(data);
  return t;
}

void FeatureSelectionConfig::validate() const {
  train.validate();
  if (kappa_grid.empty()) throw std::invalid_argument("kappa grid is empty");
  for (double k : kappa_grid) {
    if (!(k >= 0)) throw std::invalid_argument("kappa must be nonnegative");
  }
  for (double lr : lr_grid) {
    if (!(lr > 0)) throw std::invalid_argument("learning rates must be positive");
  }
  if (eval_every == 0 || patience == 0) throw std::invalid_argument("eval_every and patience must be positive");
}

double support_f1(const std::vector<std::size_t>& selected, const std::vector<std::size_t>& truth) {
  if (selected.empty() && truth.empty()) return 1.0;
  std::size_t hits = 0;
  for (auto i : selected) hits += std::binary_search(truth.begin(), truth.end(), i) ? 1 : 0;
  return 2.0 * static_cast<double>(hits) / static_cast<double>(selected.size() + truth.size());
}

namespace {

double row_norm(const Tensor& M, std::size_t i) {
  double s = 0.0;
  for (std::size_t j = 0; j < M.cols(); ++j) s += M(i, j) * M(i, j);
  return std::sqrt(s);
}

struct Net {
  FeatureModel model;
  MlpSpec spec;
  ParamSet params;
};

MlpSpec feature_spec(std::size_t d, std::size_t classes, const FeatureSelectionConfig& cfg) {
  std::vector<std::size_t> widths{d};
  widths.insert(widths.end(), cfg.hidden.begin(), cfg.hidden.end());
  widths.push_back(classes);
  return MlpSpec::make(widths, cfg.activation, true);
}

Net init_net(FeatureModel model, std::size_t d, std::size_t classes, const FeatureSelectionConfig& cfg) {
  Net n;
  n.model = model;
  n.spec = feature_spec(d, classes, cfg);
  n.params = init_mlp(n.spec, cfg.train.seed);
  Rng rng(cfg.train.seed + 1);
  if (model == FeatureModel::ensemble || model == FeatureModel::independent_masks) {
    n.params["Wl"] = random_normal({d, classes}, 1.0 / std::sqrt(static_cast<double>(d)), rng);
    if (model == FeatureModel::ensemble) {
      n.params["U"] = Tensor(Shape{d}, 1.0);
    } else {
      n.params["Ul"] = Tensor(Shape{d}, 1.0);
      n.params["Un"] = Tensor(Shape{d}, 1.0);
    }
  }
  return n;
}

// Sum of the head losses plus the penalty, on the tape.
Var net_objective(const Net& n, Graph& g, const Tensor& X, const std::vector<std::size_t>& y, double kappa) {
  std::map<std::string, Var> v;
  for (const auto& [name, t] : n.params) v.emplace(name, g.parameter(name, t));
  std::map<std::string, Var> mlp;
  for (std::size_t l = 0; l < n.spec.layers(); ++l) {
    mlp.emplace(weight_name(l), v.at(weight_name(l)));
    if (n.spec.bias[l]) mlp.emplace(bias_name(l), v.at(bias_name(l)));
  }
  Var x = g.constant(X);
  Var loss;
  Var pen;
  auto add_pen = [&](const Var& term) { pen = pen ? pen + term : term; };
  std::size_t first_decayed = 0;
  switch (n.model) {
    case FeatureModel::ensemble: {
      Var xm = scale_columns(x, v.at("U"));
      loss = softmax_cross_entropy(matmul(xm, v.at("Wl")), y) + softmax_cross_entropy(mlp_forward(n.spec, xm, mlp), y);
      add_pen(squared_norm(v.at("U")));
      add_pen(squared_norm(v.at("Wl")));
      break;
    }
    case FeatureModel::independent_masks: {
      Var xl = scale_columns(x, v.at("Ul"));
      Var xn = scale_columns(x, v.at("Un"));
      loss = softmax_cross_entropy(matmul(xl, v.at("Wl")), y) + softmax_cross_entropy(mlp_forward(n.spec, xn, mlp), y);
      add_pen(squared_norm(v.at("Ul")));
      add_pen(squared_norm(v.at("Un")));
      add_pen(squared_norm(v.at("Wl")));
      break;
    }
    case FeatureModel::mlp_weight_decay:
      loss = softmax_cross_entropy(mlp_forward(n.spec, x, mlp), y);
      break;
    case FeatureModel::mlp_l1:
      loss = softmax_cross_entropy(mlp_forward(n.spec, x, mlp), y);
      add_pen(l1_norm(v.at(weight_name(0))));
      first_decayed = 1;
      break;
  }
  for (std::size_t l = first_decayed; l < n.spec.layers(); ++l) add_pen(squared_norm(v.at(weight_name(l))));
  return kappa > 0 ? loss + scale(pen, kappa) : loss;
}

// Class probabilities; the two-head models average their heads.
Tensor net_predict(const Net& n, const Tensor& X) {
  auto scaled = [&](const Tensor& u) {
    Tensor out = X;
    for (std::size_t i = 0; i < out.rows(); ++i)
      for (std::size_t j = 0; j < out.cols(); ++j) out(i, j) *= u[j];
    return out;
  };
  const auto& P = n.params;
  switch (n.model) {
    case FeatureModel::ensemble: {
      const Tensor xm = scaled(P.at("U"));
      Tensor p = softmax_rows(matmul(xm, P.at("Wl")));
      p += softmax_rows(mlp_predict(n.spec, xm, P));
      return p * 0.5;
    }
    case FeatureModel::independent_masks: {
      Tensor p = softmax_rows(matmul(scaled(P.at("Ul")), P.at("Wl")));
      p += softmax_rows(mlp_predict(n.spec, scaled(P.at("Un")), P));
      return p * 0.5;
    }
    default:
      return softmax_rows(mlp_predict(n.spec, X, P));
  }
}

// Per-feature magnitude: |U_i| times the norm of the rows it scales, or the
// first-layer row norm for the plain MLPs. Independent masks score each head.
std::vector<Tensor> feature_scores(const Net& n) {
  const auto& P = n.params;
  const Tensor& W1 = P.at(weight_name(0));
  const std::size_t d = W1.rows();
  std::vector<Tensor> out;
  if (n.model == FeatureModel::ensemble) {
    Tensor s(Shape{d});
    const Tensor& Wl = P.at("Wl");
    for (std::size_t i = 0; i < d; ++i) {
      s[i] = std::abs(P.at("U")[i]) * std::hypot(row_norm(Wl, i), row_norm(W1, i));
    }
    out.push_back(s);
  } else if (n.model == FeatureModel::independent_masks) {
    Tensor sl(Shape{d}), sn(Shape{d});
    for (std::size_t i = 0; i < d; ++i) {
      sl[i] = std::abs(P.at("Ul")[i]) * row_norm(P.at("Wl"), i);
      sn[i] = std::abs(P.at("Un")[i]) * row_norm(W1, i);
    }
    out.push_back(sl);
    out.push_back(sn);
  } else {
    Tensor s(Shape{d});
    for (std::size_t i = 0; i < d; ++i) s[i] = row_norm(W1, i);
    out.push_back(s);
  }
  return out;
}

std::vector<std::size_t> kept(const Tensor& score, const SparsifyPolicy& policy) {
  const Tensor z = zero_below(score, policy.tight, policy.measure, policy.reference);
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < z.size(); ++i)
    if (z[i] != 0.0) out.push_back(i);
  return out;
}

// Zeroes every parameter that feeds a dropped feature.
void prune_features(Net& n, const std::vector<std::vector<std::size_t>>& keep) {
  auto drop_rows = [](Tensor& M, const std::vector<std::size_t>& k) {
    for (std::size_t i = 0; i < M.rows(); ++i) {
      if (std::binary_search(k.begin(), k.end(), i)) continue;
      for (std::size_t j = 0; j < M.cols(); ++j) M(i, j) = 0.0;
    }
  };
  auto drop_entries = [](Tensor& u, const std::vector<std::size_t>& k) {
    for (std::size_t i = 0; i < u.size(); ++i)
      if (!std::binary_search(k.begin(), k.end(), i)) u[i] = 0.0;
  };
  auto& P = n.params;
  if (n.model == FeatureModel::ensemble) {
    drop_entries(P.at("U"), keep[0]);
    drop_rows(P.at("Wl"), keep[0]);
    drop_rows(P.at(weight_name(0)), keep[0]);
  } else if (n.model == FeatureModel::independent_masks) {
    drop_entries(P.at("Ul"), keep[0]);
    drop_rows(P.at("Wl"), keep[0]);
    drop_entries(P.at("Un"), keep[1]);
    drop_rows(P.at(weight_name(0)), keep[1]);
  } else {
    drop_rows(P.at(weight_name(0)), keep[0]);
  }
}

double mask_balance_gap(const Net& n) {
  if (n.model != FeatureModel::ensemble) return 0.0;
  const auto& P = n.params;
  double gap = 0.0;
  for (std::size_t i = 0; i < P.at("U").size(); ++i) {
    const double w = std::hypot(row_norm(P.at("Wl"), i), row_norm(P.at(weight_name(0)), i));
    gap = std::max(gap, std::abs(std::abs(P.at("U")[i]) - w));
  }
  return gap;
}

std::vector<std::size_t> set_union(const std::vector<std::size_t>& a, const std::vector<std::size_t>& b) {
  std::vector<std::size_t> out;
  std::set_union(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(out));
  return out;
}

std::vector<std::size_t> set_intersection(const std::vector<std::size_t>& a, const std::vector<std::size_t>& b) {
  std::vector<std::size_t> out;
  std::set_intersection(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(out));
  return out;
}

}  // namespace

ParamSet init_feature_params(FeatureModel model, std::size_t d, std::size_t classes, const FeatureSelectionConfig& cfg) {
  return init_net(model, d, classes, cfg).params;
}

double feature_objective(FeatureModel model, const FeatureSelectionConfig& cfg, const data::LabeledData& data,
                         double kappa, const ParamSet& params, GradientMap* grads) {
  const Net n{model, feature_spec(data.X.cols(), data.classes, cfg), params};
  Graph g;
  Var loss = net_objective(n, g, data.X, data.labels, kappa);
  if (grads) *grads = g.backward(loss);
  return loss.value().item();
}

SolveReport fit_feature_model(const FeatureSelectionTask& task, FeatureModel model, double kappa,
                              const FeatureSelectionConfig& cfg) {
  cfg.validate();
  if (!(kappa >= 0)) throw std::invalid_argument("kappa must be nonnegative");
  const auto train = task.data.subset(task.split.train);
  const auto dev = task.data.subset(task.split.dev);
  const auto test = task.data.subset(task.split.test);
  const std::size_t d = task.data.X.cols();

  SolveReport report;
  report.task = "feature-select";
  report.seed = cfg.train.seed;
  report.config = cfg.train.echo();
  report.config["model"] = std::string(to_string(model));
  report.config["kappa"] = format_double(kappa);
  report.config["eval_every"] = std::to_string(cfg.eval_every);
  report.config["patience"] = std::to_string(cfg.patience);
  Stopwatch clock;

  Net net = init_net(model, d, task.data.classes, cfg);
  ObjectiveFn objective = [&](const ParamSet& p, GradientMap& grads) {
    Net at{net.model, net.spec, p};
    Graph g;
    Var loss = net_objective(at, g, train.X, train.labels, kappa);
    grads = g.backward(loss);
    return loss.value().item();
  };

  OptimizerState state(cfg.train.optimizer);
  // Scores are measured against their running peak so a collapsed mask reads as empty.
  SparsifyPolicy policy = cfg.train.thresholds;
  auto track_peak = [&](const std::vector<Tensor>& scores) {
    for (const auto& s : scores) policy.reference = std::max(policy.reference, s.abs_max());
  };
  track_peak(feature_scores(net));
  double best_dev = -1.0;
  std::size_t stale = 0, step = 0, evaluations = 0;
  for (; step < cfg.train.max_steps; ++step) {
    GradientMap grads;
    double f;
    if (cfg.train.optimizer.kind == OptimizerKind::lbfgs) {
      const auto r = lbfgs_step(net.params, objective, state);
      evaluations += r.evaluations;
      f = r.value_after;
      if (r.stationary) break;
    } else {
      f = objective(net.params, grads);
      first_order_step(net.params, grads, state);
      ++evaluations;
    }
    if (!std::isfinite(f)) {
      report.aborted = true;
      std::ostringstream ss;
      ss << "non-finite objective at step " << step << " (lr " << cfg.train.optimizer.lr << ")";
      report.diagnosis = ss.str();
      return report;
    }
    if ((step + 1) % cfg.eval_every == 0) {
      const auto scores = feature_scores(net);
      track_peak(scores);
      const auto sp = threshold_sparsify(scores[0], policy);
      report.trace.push_back({step + 1, f, sp.sparsity_loose, sp.sparsity_tight, mask_balance_gap(net)});
      const double acc = accuracy(net_predict(net, dev.X), dev.labels);
      if (acc > best_dev) {
        best_dev = acc;
        stale = 0;
      } else if (++stale >= cfg.patience) {
        ++step;
        break;
      }
    }
  }
  report.steps = step;
  report.timings["train"] = clock.seconds();

  const auto scores = feature_scores(net);
  track_peak(scores);
  std::vector<std::vector<std::size_t>> keep;
  for (const auto& s : scores) keep.push_back(kept(s, policy));
  const auto selected = keep.size() == 1 ? keep[0] : set_union(keep[0], keep[1]);
  const auto sp = threshold_sparsify(scores[0], policy);
  report.balance_gap = mask_balance_gap(net);
  prune_features(net, keep);

  report.params = net.params;
  report.params["feature_score"] = scores[0];
  report.metrics["kappa"] = kappa;
  report.metrics["evaluations"] = static_cast<double>(evaluations);
  report.metrics["lr"] = cfg.train.optimizer.lr;
  report.metrics["train_accuracy"] = accuracy(net_predict(net, train.X), train.labels);
  report.metrics["dev_accuracy"] = accuracy(net_predict(net, dev.X), dev.labels);
  report.metrics["test_accuracy"] = accuracy(net_predict(net, test.X), test.labels);
  report.metrics["selected"] = static_cast<double>(selected.size());
  report.metrics["sparsity_loose"] = sp.sparsity_loose;
  report.metrics["sparsity_tight"] = sp.sparsity_tight;
  {
    Graph g;
    report.metrics["objective"] = net_objective(net, g, train.X, train.labels, kappa).value().item();
  }
  if (keep.size() == 2) {
    const auto common = set_intersection(keep[0], keep[1]);
    report.metrics["selected_linear"] = static_cast<double>(keep[0].size());
    report.metrics["selected_mlp"] = static_cast<double>(keep[1].size());
    report.metrics["common_support"] = static_cast<double>(common.size());
    report.metrics["support_jaccard"] =
        selected.empty() ? 0.0 : static_cast<double>(common.size()) / static_cast<double>(selected.size());
  }
  if (!task.support.empty()) {
    std::size_t hits = 0;
    for (auto i : selected) hits += std::binary_search(task.support.begin(), task.support.end(), i) ? 1 : 0;
    report.metrics["f1"] = support_f1(selected, task.support);
    report.metrics["precision"] = selected.empty() ? 0.0 : static_cast<double>(hits) / static_cast<double>(selected.size());
    report.metrics["recall"] = static_cast<double>(hits) / static_cast<double>(task.support.size());
  }
  report.series["selected_features"].assign(selected.begin(), selected.end());
  return report;
}

SolveReport run_feature_selection(const FeatureSelectionTask& task, FeatureModel model,
                                  const FeatureSelectionConfig& cfg) {
  cfg.validate();
  std::vector<double> kappas = cfg.kappa_grid;
  std::sort(kappas.begin(), kappas.end(), std::greater<>());
  const std::vector<double> lrs = cfg.lr_grid.empty() ? std::vector<double>{cfg.train.optimizer.lr} : cfg.lr_grid;
  std::optional<SolveReport> best;
  std::vector<double> grid_dev;
  Stopwatch clock;
  for (double kappa : kappas) {
    for (double lr : lrs) {
      FeatureSelectionConfig c = cfg;
      c.train.optimizer.lr = lr;
      SolveReport r = fit_feature_model(task, model, kappa, c);
      grid_dev.push_back(r.aborted ? std::nan("") : r.metrics.at("dev_accuracy"));
      if (r.aborted) continue;
      if (!best || r.metrics.at("dev_accuracy") > best->metrics.at("dev_accuracy")) best = std::move(r);
    }
  }
  if (!best) {
    SolveReport failed;
    failed.task = "feature-select";
    failed.aborted = true;
    failed.diagnosis = "every kappa and learning rate diverged";
    return failed;
  }
  best->series["grid_dev_accuracy"] = grid_dev;
  best->series["grid_kappa"] = kappas;
  best->series["grid_lr"] = lrs;
  best->timings["tuning"] = clock.seconds();
  return *best;
}

}  // namespace spred
