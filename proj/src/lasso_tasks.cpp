#include "spred/lasso_tasks.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "spred/linalg.hpp"
#include "spred/random.hpp"
#include "spred/report.hpp"

namespace spred {

namespace {

Tensor planted_coefficients(std::size_t d, std::size_t nonzeros, Rng& rng) {
  Tensor w(Shape{d}, 0.0);
  std::vector<std::size_t> idx(d);
  std::iota(idx.begin(), idx.end(), 0);
  std::shuffle(idx.begin(), idx.end(), rng);
  std::normal_distribution<double> g(0.0, 1.0);
  std::bernoulli_distribution sign(0.5);
  for (std::size_t i = 0; i < nonzeros; ++i) w[idx[i]] = (sign(rng) ? 1.0 : -1.0) * (0.5 + std::abs(g(rng)));
  return w;
}

LassoInstance finish_instance(oracles::LassoProblem p, Tensor w_true, double noise_std, Rng& rng, bool orthonormal) {
  p.y = matmul(p.X, w_true);
  if (noise_std > 0) p.y += random_normal(p.y.shape(), noise_std, rng);
  LassoInstance inst{std::move(p), std::move(w_true), Tensor{}};
  inst.closed_form = orthonormal ? oracles::closed_form_lasso_orthonormal(inst.problem)
                                 : oracles::coordinate_descent_lasso(inst.problem, 1e-12).w;
  return inst;
}

struct BudgetExhausted {};

}  // namespace

LassoInstance gen_orthonormal_lasso(std::size_t d, double true_sparsity, double noise_std, std::uint64_t seed,
                                    double kappa) {
  if (d < 1) throw std::invalid_argument("lasso dimension must be at least 1");
  if (!(true_sparsity >= 0 && true_sparsity <= 1)) throw std::invalid_argument("true sparsity must lie in [0, 1]");
  if (!(noise_std >= 0)) throw std::invalid_argument("noise standard deviation must be nonnegative");
  Rng rng(seed);
  oracles::LassoProblem p;
  p.X = linalg::random_orthonormal(d, rng);
  p.kappa = kappa;
  const auto zeros = static_cast<std::size_t>(std::round(true_sparsity * static_cast<double>(d)));
  Tensor w = planted_coefficients(d, d - zeros, rng);
  return finish_instance(std::move(p), std::move(w), noise_std, rng, true);
}

LassoInstance gen_random_lasso(std::size_t n, std::size_t d, std::size_t k_true, double noise_std, std::uint64_t seed,
                               double kappa) {
  if (n < 1 || d < 1) throw std::invalid_argument("lasso dimensions must be positive");
  if (k_true > d) throw std::invalid_argument("planted support larger than the dimension");
  Rng rng(seed);
  oracles::LassoProblem p;
  p.X = random_normal({n, d}, 1.0 / std::sqrt(static_cast<double>(n)), rng);
  p.kappa = kappa;
  Tensor w = planted_coefficients(d, k_true, rng);
  return finish_instance(std::move(p), std::move(w), noise_std, rng, false);
}

std::vector<double> orthonormal_kappa_grid(const oracles::LassoProblem& p, std::size_t count) {
  if (count < 2) throw std::invalid_argument("kappa grid needs at least two points");
  const Tensor c = matmul_tn(p.X, p.y);
  std::vector<double> a;
  for (double v : c.data()) a.push_back(std::abs(v));
  std::sort(a.begin(), a.end());
  const std::size_t d = a.size();
  std::vector<double> grid{0.0};
  // Interior points sit in the widest gap of |X^T y| within each quantile bin, so
  // no coordinate lies close to the soft-threshold kink.
  for (std::size_t q = 1; q + 1 < count; ++q) {
    const std::size_t lo = std::max<std::size_t>(1, (q * d) / count - d / (2 * count));
    const std::size_t hi = std::min(d - 1, (q * d) / count + d / (2 * count));
    std::size_t best = lo;
    for (std::size_t i = lo; i <= hi; ++i) {
      if (a[i] - a[i - 1] > a[best] - a[best - 1]) best = i;
    }
    grid.push_back(0.5 * (a[best] + a[best - 1]));
  }
  grid.push_back(1.05 * a.back());
  return grid;
}

SpredModel lasso_model(const oracles::LassoProblem& p, const TrainConfig& cfg) {
  p.validate();
  SpredModel m;
  const Shape shape = p.y.rank() == 1 ? Shape{p.features()} : Shape{p.features(), p.outputs()};
  m.sparse.emplace("w", make_spred_param(shape, p.kappa, SpredMode::elementwise, cfg.init, cfg.seed, p.features()));
  m.dense_decay = 0.0;
  m.base_loss = [X = p.X, y = p.y](Graph& g, const ValueMap& v) {
    return squared_error(matmul(g.constant(X), v.at("w")), g.constant(y));
  };
  return m;
}

SolveReport run_spred_lasso(const oracles::LassoProblem& p, const TrainConfig& cfg) {
  SpredModel m = lasso_model(p, cfg);
  SolveReport r = train_spred(m, cfg, "lasso");
  r.config["kappa"] = format_double(p.kappa);
  if (r.aborted) return r;
  r.metrics["kkt_residual"] = oracles::lasso_kkt_residual(p, r.params.at("w"));
  r.metrics["l1_norm"] = r.params.at("w").l1_norm();
  return r;
}

SolveReport run_naive_l1_lasso(const oracles::LassoProblem& p, const TrainConfig& cfg) {
  cfg.validate();
  p.validate();
  if (cfg.optimizer.kind == OptimizerKind::lbfgs) {
    throw std::invalid_argument("the naive L1 baseline uses first-order (sub)gradient steps");
  }
  SolveReport r;
  r.task = "lasso-naive-l1";
  r.seed = cfg.seed;
  r.config = cfg.echo();
  r.config["kappa"] = format_double(p.kappa);
  Stopwatch clock;
  // Same starting point as spred: the product of the initial factors.
  const SpredModel start = lasso_model(p, cfg);
  ParamSet params{{"w", effective_value(start.sparse.at("w"))}};
  OptimizerState state(cfg.optimizer);
  const Tensor X = p.X, y = p.y;
  SparsifyPolicy policy = cfg.thresholds;
  double peak = 0.0;
  std::size_t step = 0;
  for (;; ++step) {
    Graph g;
    Var w = g.parameter("w", params.at("w"));
    Var loss = squared_error(matmul(g.constant(X), w), g.constant(y)) + scale(l1_norm(w), 2.0 * p.kappa);
    const double f = loss.value().item();
    if (!std::isfinite(f)) {
      r.aborted = true;
      r.diagnosis = "non-finite objective at step " + std::to_string(step);
      break;
    }
    peak = std::max(peak, params.at("w").abs_max());
    policy.reference = peak;
    const auto sp = threshold_sparsify(params.at("w"), policy);
    if (step % cfg.record_every == 0 || step == cfg.max_steps) {
      r.trace.push_back({step, f, sp.sparsity_loose, sp.sparsity_tight, 0.0});
    }
    if (step == cfg.max_steps) break;
    auto grads = g.backward(loss);
    first_order_step(params, grads, state);
  }
  r.steps = step;
  r.timings["train"] = clock.seconds();
  if (r.aborted) return r;
  const Tensor& w = params.at("w");
  const auto sp = threshold_sparsify(w, policy);
  r.params["w"] = sp.tight;
  r.metrics["objective"] = oracles::lasso_objective(p, w);
  r.metrics["l1_objective"] = oracles::lasso_objective(p, sp.tight);
  r.metrics["exact_zero_rate"] = exact_zero_rate(w);
  r.metrics["sparsity_loose"] = sp.sparsity_loose;
  r.metrics["sparsity_tight"] = sp.sparsity_tight;
  r.metrics["l1_norm"] = w.l1_norm();
  r.metrics["kkt_residual"] = oracles::lasso_kkt_residual(p, sp.tight);
  return r;
}

double exact_zero_rate(const Tensor& w) { return zero_fraction(w); }

void compare_with_oracle(SolveReport& report, const oracles::LassoProblem& p, const std::string& param) {
  if (report.aborted || !report.params.count(param)) return;
  Stopwatch clock;
  const bool orthonormal = p.samples() == p.features() && linalg::orthonormality_defect(p.X) <= 1e-8;
  const Tensor oracle =
      orthonormal ? oracles::closed_form_lasso_orthonormal(p) : oracles::coordinate_descent_lasso(p, 1e-12).w;
  report.timings["oracle"] = clock.seconds();
  const Tensor& w = report.params.at(param);
  const double fo = oracles::lasso_objective(p, oracle);
  const double fw = oracles::lasso_objective(p, w);
  std::size_t mismatch = 0;
  for (std::size_t i = 0; i < w.size(); ++i) mismatch += (w[i] == 0.0) != (oracle[i] == 0.0);
  report.metrics["oracle_objective"] = fo;
  report.metrics["oracle_linf"] = max_abs_diff(w, oracle);
  report.metrics["oracle_sparsity"] = zero_fraction(oracle);
  report.metrics["support_mismatch"] = static_cast<double>(mismatch);
  report.metrics["relative_objective_gap"] = (fw - fo) / std::max(std::abs(fo), 1e-300);
  report.config["oracle"] = orthonormal ? "closed-form" : "coordinate-descent";
}

BenchSolver parse_bench_solver(std::string_view name) {
  if (name == "spred") return BenchSolver::spred;
  if (name == "cd" || name == "coordinate-descent") return BenchSolver::coordinate_descent;
  if (name == "ista") return BenchSolver::ista;
  throw std::invalid_argument("unknown solver '" + std::string(name) + "' (expected spred, cd or ista)");
}

std::string_view to_string(BenchSolver s) {
  switch (s) {
    case BenchSolver::spred: return "spred";
    case BenchSolver::coordinate_descent: return "cd";
    case BenchSolver::ista: return "ista";
  }
  return "?";
}

std::vector<BenchRow> bench_scaling(const std::vector<std::size_t>& dims, const std::vector<BenchSolver>& solvers,
                                    const BenchOptions& options) {
  if (!std::is_sorted(dims.begin(), dims.end())) throw std::invalid_argument("bench dimensions must be ascending");
  if (dims.empty() || solvers.empty()) throw std::invalid_argument("bench needs dimensions and solvers");
  options.spred.validate();
  const std::vector<double> milestones{0.75, 0.90, 1.00};
  std::vector<BenchRow> rows;
  for (std::size_t d : dims) {
    auto inst = gen_random_lasso(options.samples, d, std::min(options.k_true, d), options.noise_std, options.seed);
    auto& p = inst.problem;
    p.kappa = options.kappa_fraction * matmul_tn(p.X, p.y).abs_max();

    for (auto solver : solvers) {
      // Pass 1 (timed): zero rate after every iteration.
      std::vector<double> times, zero_rates, objectives;
      bool censored = false;
      Stopwatch clock;
      Tensor final_w;
      auto track = [&](const Tensor& w) {
        times.push_back(clock.seconds());
        zero_rates.push_back(zero_fraction(w));
        if (times.back() > options.budget_seconds) throw BudgetExhausted{};
      };
      try {
        if (solver == BenchSolver::spred) {
          TrainConfig cfg = options.spred;
          SpredModel m = lasso_model(p, cfg);
          auto report = train_spred(m, cfg, "lasso-bench", [&](const TraceRow& row) {
            times.push_back(clock.seconds());
            zero_rates.push_back(row.sparsity_tight);
            objectives.push_back(row.objective);
            if (times.back() > options.budget_seconds) throw BudgetExhausted{};
          });
          // A stalled run sits at its final iterate; only budget exhaustion censors it.
          censored = !report.converged && report.metrics["stalled"] == 0.0;
          if (!report.aborted) final_w = report.params.at("w");
        } else if (solver == BenchSolver::coordinate_descent) {
          auto r = oracles::coordinate_descent_lasso(p, options.oracle_tol, 1000000,
                                                     [&](std::size_t, const Tensor& w) { track(w); });
          censored = !r.converged;
          final_w = r.w;
        } else {
          auto r = oracles::ista_fista_lasso(p, oracles::ProxVariant::ista, options.oracle_tol * 1e-3, 10000000, nullptr,
                                             [&](std::size_t, const Tensor& w) { track(w); });
          censored = !r.converged;
          final_w = r.w;
        }
      } catch (const BudgetExhausted&) {
        censored = true;
      }
      const double final_rate = zero_rates.empty() ? 0.0 : zero_rates.back();
      std::vector<std::size_t> hit(milestones.size(), zero_rates.size());
      for (std::size_t m = 0; m < milestones.size(); ++m) {
        for (std::size_t i = 0; i < zero_rates.size(); ++i) {
          if (zero_rates[i] >= milestones[m] * final_rate) {
            hit[m] = i;
            break;
          }
        }
      }
      // Pass 2 (untimed): lasso objective at the milestone iterates.
      std::vector<double> milestone_obj(milestones.size(), std::nan(""));
      if (solver == BenchSolver::spred) {
        for (std::size_t m = 0; m < milestones.size(); ++m)
          if (hit[m] < objectives.size()) milestone_obj[m] = objectives[hit[m]];
        if (final_w.size() && !censored) milestone_obj.back() = std::min(milestone_obj.back(), oracles::lasso_objective(p, final_w));
      } else {
        auto capture = [&](std::size_t it, const Tensor& w) {
          for (std::size_t m = 0; m < milestones.size(); ++m)
            if (hit[m] + 1 == it) milestone_obj[m] = oracles::lasso_objective(p, w);
          if (it >= zero_rates.size()) throw BudgetExhausted{};
        };
        try {
          if (solver == BenchSolver::coordinate_descent) {
            oracles::coordinate_descent_lasso(p, options.oracle_tol, 1000000, capture);
          } else {
            oracles::ista_fista_lasso(p, oracles::ProxVariant::ista, options.oracle_tol * 1e-3, 10000000, nullptr,
                                      capture);
          }
        } catch (const BudgetExhausted&) {
        }
      }
      for (std::size_t m = 0; m < milestones.size(); ++m) {
        BenchRow row;
        row.solver = std::string(to_string(solver));
        row.dimension = d;
        row.milestone = milestones[m];
        row.censored = censored || hit[m] >= times.size();
        row.seconds = hit[m] < times.size() ? times[hit[m]] : clock.seconds();
        row.iterations = hit[m] < times.size() ? hit[m] + (solver == BenchSolver::spred ? 0 : 1) : zero_rates.size();
        row.objective = milestone_obj[m];
        rows.push_back(row);
      }
    }
  }
  return rows;
}

std::string bench_csv(const std::vector<BenchRow>& rows) {
  std::ostringstream ss;
  ss << "solver,dimension,milestone,seconds,objective,iterations,censored\n";
  for (const auto& r : rows) {
    ss << r.solver << ',' << r.dimension << ',' << format_double(r.milestone) << ',' << format_double(r.seconds) << ','
       << format_double(r.objective) << ','
       << r.iterations << ',' << (r.censored ? 1 : 0) << '\n';
  }
  return ss.str();
}

}  // namespace spred
