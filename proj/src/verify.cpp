#include "spred/verify.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "spred/data.hpp"
#include "spred/feature_selection.hpp"
#include "spred/lasso_tasks.hpp"
#include "spred/node_sparsity.hpp"
#include "spred/oracles.hpp"
#include "spred/prune.hpp"
#include "spred/random.hpp"
#include "spred/report.hpp"
#include "spred/sparse_coding.hpp"

namespace spred {

std::map<std::string, Tensor> numeric_gradient(const ScalarFunction& f, std::map<std::string, Tensor> point, double h) {
  std::map<std::string, Tensor> out;
  for (auto& [name, t] : point) {
    Tensor g(t.shape(), 0.0);
    for (std::size_t i = 0; i < t.size(); ++i) {
      const double orig = t[i];
      t[i] = orig + h;
      const double fp = f(point);
      t[i] = orig - h;
      const double fm = f(point);
      t[i] = orig;
      g[i] = (fp - fm) / (2.0 * h);
    }
    out.emplace(name, std::move(g));
  }
  return out;
}

double gradient_error(const std::map<std::string, Tensor>& analytic, const std::map<std::string, Tensor>& numeric,
                      double floor) {
  double worst = 0.0;
  for (const auto& [name, n] : numeric) {
    auto it = analytic.find(name);
    if (it == analytic.end() || it->second.shape() != n.shape()) return std::numeric_limits<double>::infinity();
    const double s = std::max(n.abs_max(), floor);
    for (std::size_t i = 0; i < n.size(); ++i) worst = std::max(worst, std::abs(it->second[i] - n[i]) / s);
  }
  return worst;
}

namespace {

double rel(double a, double b) { return std::abs(a - b) / std::max(1.0, std::abs(b)); }

std::size_t draw(Rng& rng, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

double uniform(Rng& rng, double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }

// ||X v - y||^2 over a random design, on a single sparse parameter "v".
SpredModel regression_model(SpredParam p, Rng& rng) {
  const std::size_t d = p.W.size();
  const std::size_t n = draw(rng, 3, 12);
  const Tensor X = random_normal({n, d}, 1.0, rng);
  const Tensor y = random_normal({n}, 1.0, rng);
  SpredModel m;
  m.dense_decay = 0.0;
  m.sparse.emplace("v", std::move(p));
  m.base_loss = [X, y](Graph& g, const ValueMap& v) {
    return squared_error(matmul(g.constant(X), reshape(v.at("v"), {X.cols()})), g.constant(y));
  };
  return m;
}

double objective(const SpredModel& m) {
  Graph g;
  return spred_objective(m, g).value().item();
}

Tensor random_signs(Tensor t, Rng& rng) {
  std::bernoulli_distribution coin(0.5);
  for (auto& v : t.data()) v = coin(rng) ? v : -v;
  return t;
}

InvariantResult finish(std::string name, double worst, double tol, std::size_t trials, bool passed,
                       std::string detail = {}) {
  InvariantResult r;
  r.name = std::move(name);
  r.worst = worst;
  r.tolerance = tol;
  r.trials = trials;
  r.passed = passed && std::isfinite(worst);
  r.detail = std::move(detail);
  return r;
}

InvariantResult check_objective_identity(Rng& rng, std::size_t trials) {
  double worst = 0.0;
  for (std::size_t t = 0; t < trials; ++t) {
    const std::size_t d = draw(rng, 1, 20);
    Tensor U = random_normal({d}, 1.0, rng);
    Tensor W(Shape{d});
    for (std::size_t i = 0; i < d; ++i) W[i] = std::abs(U[i]);
    W = random_signs(W, rng);
    SpredModel m = regression_model(spred_param_from_factors(U, W, uniform(rng, 0.0, 2.0)), rng);
    worst = std::max(worst, rel(objective(m), l1_objective(m, effective_values(m))));
  }
  return finish("balanced objective equals l1 objective", worst, 1e-12, trials, worst <= 1e-12);
}

InvariantResult check_descent_bound(Rng& rng, std::size_t trials) {
  double worst = -std::numeric_limits<double>::infinity();
  std::size_t failures = 0;
  for (std::size_t t = 0; t < trials; ++t) {
    const std::size_t d = draw(rng, 1, 20);
    SpredModel m = regression_model(
        spred_param_from_factors(random_normal({d}, 1.0, rng), random_normal({d}, 2.0, rng), uniform(rng, 0.05, 2.0)),
        rng);
    const double gap = l1_objective(m, effective_values(m)) - objective(m);
    worst = std::max(worst, gap);
    failures += gap < 0 ? 0 : 1;
  }
  return finish("unbalanced objective exceeds l1 objective", worst, 0.0, trials, failures == 0,
                std::to_string(failures) + " trials without strict inequality");
}

InvariantResult check_rebalance(Rng& rng, std::size_t trials) {
  double worst_product = 0.0;
  std::size_t failures = 0;
  for (std::size_t t = 0; t < trials; ++t) {
    const std::size_t d = draw(rng, 1, 20);
    const bool group = t % 2 == 1;
    const double kappa = uniform(rng, 0.05, 2.0);
    SpredParam p = group ? spred_param_from_factors(Tensor::scalar(uniform(rng, -3.0, 3.0)),
                                                    random_normal({d}, 1.0, rng), kappa, SpredMode::group)
                         : spred_param_from_factors(random_normal({d}, 1.0, rng), random_normal({d}, 2.0, rng), kappa);
    SpredModel before = regression_model(p, rng);
    SpredModel after = before;
    after.sparse.at("v") = rebalance(p);
    const Tensor v0 = effective_value(p), v1 = effective_value(after.sparse.at("v"));
    for (std::size_t i = 0; i < v0.size(); ++i) worst_product = std::max(worst_product, std::abs(v0[i] - v1[i]));
    const double gap = balance_gap(p);
    const double pen0 = penalty(p), pen1 = penalty(after.sparse.at("v"));
    const bool decreased = gap > 0 ? pen1 < pen0 : pen1 <= pen0;
    const bool base_same = base_loss_value(before, effective_values(before)) ==
                           base_loss_value(after, effective_values(after)) ||
                           rel(base_loss_value(after, effective_values(after)),
                               base_loss_value(before, effective_values(before))) <= 1e-12;
    if (!decreased || !base_same || objective(after) > objective(before)) ++failures;
  }
  return finish("rebalance keeps the product and lowers the penalty", worst_product, 1e-12, trials,
                failures == 0 && worst_product <= 1e-12, std::to_string(failures) + " trials violated descent");
}

InvariantResult check_split_rescaling(Rng& rng, std::size_t trials) {
  double worst = 0.0;
  for (std::size_t t = 0; t < trials; ++t) {
    const std::size_t d = draw(rng, 1, 20);
    const double kappa = uniform(rng, 0.05, 2.0);
    const double alpha = kappa * std::exp(uniform(rng, -3.0, 3.0));
    SpredModel sym = regression_model(
        spred_param_from_factors(random_normal({d}, 1.0, rng), random_normal({d}, 1.0, rng), kappa), rng);
    SpredModel split = sym;
    split.sparse.at("v") = rescale_to_split(sym.sparse.at("v"), alpha, kappa * kappa / alpha);
    worst = std::max(worst, rel(objective(split), objective(sym)));
  }
  return finish("alpha beta = kappa^2 rescaling preserves the objective", worst, 1e-10, trials, worst <= 1e-10);
}

InvariantResult check_group_identity(Rng& rng, std::size_t trials) {
  double worst = 0.0;
  for (std::size_t t = 0; t < trials; ++t) {
    const std::size_t d = draw(rng, 1, 20);
    Tensor W = random_normal({d}, 1.0, rng);
    const double u = (t % 2 == 0 ? 1.0 : -1.0) * W.norm();
    const double kappa = uniform(rng, 0.05, 2.0);
    SpredParam p = spred_param_from_factors(Tensor::scalar(u), W, kappa, SpredMode::group);
    worst = std::max(worst, rel(penalty(p), sparse_penalty(effective_value(p), kappa, SpredMode::group)));
    SpredModel m = regression_model(p, rng);
    worst = std::max(worst, rel(objective(m), l1_objective(m, effective_values(m))));
  }
  return finish("group penalty equals 2 kappa ||u W||", worst, 1e-12, trials, worst <= 1e-12);
}

double spred_gradient_error(const SpredModel& m) {
  const auto analytic = evaluate(m).grads;
  auto f = [&](const std::map<std::string, Tensor>& at) {
    SpredModel c = m;
    assign(c, at);
    return evaluate(c).value;
  };
  return gradient_error(analytic, numeric_gradient(f, parameters(m)));
}

data::LabeledData small_classification(std::size_t n, std::size_t d, std::size_t classes, Rng& rng) {
  return data::gaussian_mixture(n, d, classes, 2.0, 1.0, rng());
}

InvariantResult check_gradients(Rng& rng, std::size_t trials) {
  const std::size_t rounds = std::max<std::size_t>(1, trials / 50);
  std::map<std::string, double> worst;
  auto note = [&](const std::string& name, double e) { worst[name] = std::max(worst[name], e); };
  for (std::size_t r = 0; r < rounds; ++r) {
    const std::size_t d = draw(rng, 2, 8);
    note("elementwise spred", spred_gradient_error(regression_model(
                                  make_spred_param({d}, uniform(rng, 0.1, 1.0), SpredMode::elementwise,
                                                   InitScheme::sqrt_standard, rng()),
                                  rng)));
    note("group spred", spred_gradient_error(regression_model(
                            make_spred_param({d}, uniform(rng, 0.1, 1.0), SpredMode::group, InitScheme::sqrt_standard,
                                             rng()),
                            rng)));

    const auto cls = small_classification(12, 4, 3, rng);
    {
      PruneConfig pc;
      pc.kappa = uniform(rng, 0.01, 0.5);
      pc.train.seed = rng();
      note("prune classifier", spred_gradient_error(
                                   prune_model(MlpSpec::make({4, 5, 3}, Activation::swish, true), cls, pc)));
    }
    {
      const auto spec = MlpSpec::make({4, 5, 3}, Activation::swish, false);
      const double kappa = uniform(rng, 0.01, 0.5);
      const ParamSet p = init_mlp(spec, rng());
      GradientMap grads;
      node_sparsity_objective(spec, cls, kappa, p, &grads);
      note("node sparsity", gradient_error(grads, numeric_gradient([&](const ParamSet& at) {
                                             return node_sparsity_objective(spec, cls, kappa, at);
                                           }, p)));
    }
    for (auto model : {FeatureModel::ensemble, FeatureModel::independent_masks, FeatureModel::mlp_weight_decay,
                       FeatureModel::mlp_l1}) {
      FeatureSelectionConfig fc;
      fc.hidden = {5};
      fc.activation = Activation::swish;
      fc.train.seed = rng();
      const double kappa = uniform(rng, 0.01, 0.5);
      const ParamSet p = init_feature_params(model, cls.X.cols(), cls.classes, fc);
      GradientMap grads;
      feature_objective(model, fc, cls, kappa, p, &grads);
      note("feature selection " + std::string(to_string(model)),
           gradient_error(grads, numeric_gradient([&](const ParamSet& at) {
                            return feature_objective(model, fc, cls, kappa, at);
                          }, p)));
    }
    {
      const std::size_t d0 = draw(rng, 2, 6), k = draw(rng, 2, 5), n = draw(rng, 2, 6);
      const Tensor X = random_normal({d0, n}, 1.0, rng);
      const Tensor B = random_dictionary(d0, k, rng());
      const double kappa = uniform(rng, 0.01, 0.5);
      auto codes = [&](const ParamSet& at, GradientMap* grads) {
        Graph g;
        Var loss = code_objective(g, X, B, g.parameter("U", at.at("U")), g.parameter("W", at.at("W")), kappa);
        if (grads) *grads = g.backward(loss);
        return loss.value().item();
      };
      const ParamSet uw{{"U", random_normal({k, n}, 1.0, rng)}, {"W", random_normal({k, n}, 1.0, rng)}};
      GradientMap grads;
      codes(uw, &grads);
      note("sparse coding codes",
           gradient_error(grads, numeric_gradient([&](const ParamSet& at) { return codes(at, nullptr); }, uw)));
      const Tensor S = random_normal({k, n}, 1.0, rng);
      auto dict = [&](const ParamSet& at, GradientMap* gr) {
        Graph g;
        Var loss = dictionary_objective(g, X, g.parameter("B", at.at("B")), S);
        if (gr) *gr = g.backward(loss);
        return loss.value().item();
      };
      const ParamSet bp{{"B", random_normal({d0, k}, 1.0, rng)}};
      dict(bp, &grads);
      note("sparse coding dictionary",
           gradient_error(grads, numeric_gradient([&](const ParamSet& at) { return dict(at, nullptr); }, bp)));
    }
  }
  double all = 0.0;
  std::ostringstream detail;
  for (const auto& [name, e] : worst) {
    all = std::max(all, e);
    detail << name << " " << format_double(e) << "; ";
  }
  return finish("task objective gradients match finite differences", all, 1e-5, rounds, all <= 1e-5, detail.str());
}

InvariantResult check_oracles(Rng& rng, std::size_t trials) {
  const std::size_t count = std::max<std::size_t>(5, trials / 10);
  double worst_obj = 0.0, worst_kkt = 0.0;
  for (std::size_t t = 0; t < count; ++t) {
    const std::size_t n = draw(rng, 20, 100), d = draw(rng, 5, 50);
    auto inst = gen_random_lasso(n, d, std::max<std::size_t>(1, d / 5), 0.3, rng());
    oracles::LassoProblem p = inst.problem;
    double top = 0.0;
    const Tensor Xty = matmul(p.X.transposed(), p.y);
    top = Xty.abs_max();
    p.kappa = uniform(rng, 0.05, 0.6) * top;
    const auto cd = oracles::coordinate_descent_lasso(p, 1e-12);
    const auto fista = oracles::ista_fista_lasso(p, oracles::ProxVariant::fista, 1e-15);
    const double ref = oracles::lasso_objective(p, cd.w);
    worst_obj = std::max(worst_obj, rel(oracles::lasso_objective(p, fista.w), ref));
    worst_kkt = std::max(worst_kkt, oracles::lasso_kkt_residual(p, cd.w) / std::max(1.0, top));

    oracles::GroupLassoProblem gp{p, {}};
    for (std::size_t i = 0; i < d; ++i) gp.groups.push_back({i});
    const auto group = oracles::group_lasso_prox(gp, 1e-15);
    worst_obj = std::max(worst_obj, rel(oracles::lasso_objective(p, group.w), ref));

    if (t % 2 == 0) {
      auto ortho = gen_orthonormal_lasso(d, 0.3, 0.1, rng(), 0.0);
      ortho.problem.kappa = uniform(rng, 0.0, 1.0);
      const auto cf = oracles::closed_form_lasso_orthonormal(ortho.problem);
      const auto cdo = oracles::coordinate_descent_lasso(ortho.problem, 1e-12);
      worst_obj = std::max(worst_obj, rel(oracles::lasso_objective(ortho.problem, cdo.w),
                                          oracles::lasso_objective(ortho.problem, cf)));
    }
  }
  const bool ok = worst_obj <= 1e-6 && worst_kkt <= 1e-9;
  std::ostringstream detail;
  detail << "objective gap " << worst_obj << ", KKT residual " << worst_kkt;
  return finish("lasso oracles agree", std::max(worst_obj, worst_kkt), 1e-6, count, ok, detail.str());
}

InvariantResult check_optimizer_state(Rng& rng, std::size_t trials) {
  const std::size_t count = std::max<std::size_t>(3, trials / 50);
  std::size_t failures = 0;
  for (std::size_t t = 0; t < count; ++t) {
    const std::size_t d = draw(rng, 2, 10);
    const Tensor c = random_normal({d}, 1.0, rng);
    ObjectiveFn f = [&](const ParamSet& p, GradientMap& grads) {
      Graph g;
      Var loss = squared_error(g.parameter("x", p.at("x")), g.constant(c));
      grads = g.backward(loss);
      return loss.value().item();
    };
    for (auto kind : {OptimizerKind::sgd, OptimizerKind::adam, OptimizerKind::lbfgs}) {
      OptimizerConfig oc;
      oc.kind = kind;
      oc.lr = kind == OptimizerKind::lbfgs ? 1.0 : 0.05;
      oc.momentum = kind == OptimizerKind::sgd ? 0.5 : 0.0;
      OptimizerState state(oc);
      ParamSet p{{"x", random_normal({d}, 1.0, rng)}};
      for (int s = 0; s < 3; ++s) {
        if (kind == OptimizerKind::lbfgs) {
          lbfgs_step(p, f, state);
        } else {
          GradientMap grads;
          f(p, grads);
          first_order_step(p, grads, state);
        }
      }
      const std::string text = serialize(state);
      if (!(deserialize_optimizer_state(text) == state) || serialize(deserialize_optimizer_state(text)) != text) {
        ++failures;
      }
    }
  }
  return finish("optimizer state round-trips", static_cast<double>(failures), 0.0, count, failures == 0);
}

InvariantResult check_zero_gradient(Rng& rng) {
  Graph g;
  Var a = g.parameter("a", random_normal({3}, 1.0, rng));
  Var b = g.parameter("b", random_normal({3}, 1.0, rng));
  const auto grads = g.backward(squared_norm(a));
  const bool ok = grads.count("b") == 1 && grads.at("b") == Tensor(Shape{3}, 0.0);
  return finish("unused leaves get exact zero gradients", ok ? 0.0 : 1.0, 0.0, 1, ok);
}

}  // namespace

std::vector<InvariantResult> run_invariant_suite(const VerifyOptions& options) {
  Rng rng(options.seed);
  const std::size_t n = std::max<std::size_t>(1, options.trials);
  std::vector<InvariantResult> out;
  out.push_back(check_objective_identity(rng, n));
  out.push_back(check_descent_bound(rng, n));
  out.push_back(check_rebalance(rng, n));
  out.push_back(check_split_rescaling(rng, n));
  out.push_back(check_group_identity(rng, n));
  out.push_back(check_zero_gradient(rng));
  out.push_back(check_gradients(rng, n));
  out.push_back(check_oracles(rng, n));
  out.push_back(check_optimizer_state(rng, n));
  return out;
}

}  // namespace spred
