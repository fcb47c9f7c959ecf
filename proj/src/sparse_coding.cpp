#include "spred/sparse_coding.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "spred/oracles.hpp"
#include "spred/random.hpp"
#include "spred/report.hpp"

namespace spred {

namespace {

Tensor gather_columns(const Tensor& M, const std::vector<std::size_t>& cols) {
  Tensor out(Shape{M.rows(), cols.size()});
  for (std::size_t i = 0; i < M.rows(); ++i)
    for (std::size_t c = 0; c < cols.size(); ++c) out(i, c) = M(i, cols[c]);
  return out;
}

void scatter_columns(Tensor& M, const Tensor& part, const std::vector<std::size_t>& cols) {
  for (std::size_t i = 0; i < M.rows(); ++i)
    for (std::size_t c = 0; c < cols.size(); ++c) M(i, cols[c]) = part(i, c);
}

double column_norm_error(const Tensor& B) {
  double worst = 0.0;
  for (std::size_t j = 0; j < B.cols(); ++j) worst = std::max(worst, std::abs(B.col(j).norm() - 1.0));
  return worst;
}

double factor_balance_gap(const Tensor& U, const Tensor& W) {
  double gap = 0.0;
  for (std::size_t i = 0; i < U.size(); ++i) gap = std::max(gap, std::abs(std::abs(U[i]) - std::abs(W[i])));
  return gap;
}

}  // namespace

void SparseCodingConfig::validate() const {
  train.validate();
  if (train.optimizer.kind == OptimizerKind::lbfgs) {
    throw std::invalid_argument("sparse coding trains the code factors with sgd or adam");
  }
  if (k == 0 || epochs == 0 || steps_per_batch == 0) {
    throw std::invalid_argument("sparse coding needs k, epochs and steps per batch to be positive");
  }
  if (!(kappa >= 0)) throw std::invalid_argument("kappa must be nonnegative");
}

Tensor random_dictionary(std::size_t d0, std::size_t k, std::uint64_t seed) {
  Rng rng(seed);
  Tensor B = random_normal({d0, k}, 1.0, rng);
  oracles::normalize_columns(B);
  return B;
}

Var code_objective(Graph& g, const Tensor& X, const Tensor& B, const Var& U, const Var& W, double kappa) {
  return squared_error(matmul(g.constant(B), hadamard(U, W)), g.constant(X)) +
         scale(squared_norm(U) + squared_norm(W), kappa);
}

Var dictionary_objective(Graph& g, const Tensor& X, const Var& B, const Tensor& S) {
  return squared_error(matmul(normalize_columns(B), g.constant(S)), g.constant(X));
}

SparseCodingRun run_sparse_coding(const Tensor& X, const SparseCodingConfig& cfg) {
  cfg.validate();
  if (X.rank() != 2) throw ShapeError("patch matrix must be [d0 x N], got " + shape_to_string(X.shape()));
  const std::size_t d0 = X.rows(), N = X.cols(), k = cfg.k;
  const std::size_t batch = cfg.train.batch_size == 0 ? N : std::min(cfg.train.batch_size, N);

  SparseCodingRun run;
  SolveReport& report = run.report;
  report.task = "sparse-code";
  report.seed = cfg.train.seed;
  report.config = cfg.train.echo();
  report.config["k"] = std::to_string(k);
  report.config["kappa"] = format_double(cfg.kappa);
  report.config["epochs"] = std::to_string(cfg.epochs);
  report.config["steps_per_batch"] = std::to_string(cfg.steps_per_batch);
  report.config["dictionary_steps"] = std::to_string(cfg.dictionary_steps);
  report.config["normalize_rows"] = cfg.normalize_rows ? "on" : "off";
  Stopwatch clock;

  run.B = cfg.initial_dictionary ? *cfg.initial_dictionary : random_dictionary(d0, k, cfg.train.seed + 1);
  if (run.B.rank() != 2 || run.B.rows() != d0 || run.B.cols() != k) {
    throw ShapeError("initial dictionary must be [" + std::to_string(d0) + "x" + std::to_string(k) + "], got " +
                     shape_to_string(run.B.shape()));
  }
  oracles::normalize_columns(run.B);
  {
    SpredParam init = make_spred_param({k, N}, cfg.kappa, SpredMode::elementwise, cfg.train.init, cfg.train.seed, k);
    run.U = std::move(init.U);
    run.W = std::move(init.W);
  }

  const double kappa = cfg.kappa;
  auto full_objective = [&]() {
    const Tensor R = X - matmul(run.B, hadamard(run.U, run.W));
    return R.squared_norm() + kappa * (run.U.squared_norm() + run.W.squared_norm());
  };

  OptimizerState factor_state(cfg.train.optimizer);
  OptimizerConfig bcfg;
  bcfg.kind = OptimizerKind::lbfgs;
  bcfg.lr = 1.0;
  OptimizerConfig adam_cfg;
  adam_cfg.kind = OptimizerKind::adam;
  adam_cfg.lr = 1e-3;
  OptimizerState adam_state(adam_cfg);

  Rng rng(cfg.train.seed + 2);
  std::vector<std::size_t> order(N);
  std::iota(order.begin(), order.end(), 0);
  double worst_norm_error = column_norm_error(run.B);
  double peak = 0.0;
  SparsifyPolicy policy = cfg.train.thresholds;
  std::size_t fallbacks = 0, factor_steps = 0;

  auto record = [&](std::size_t epoch) {
    const Tensor S = hadamard(run.U, run.W);
    peak = std::max(peak, S.abs_max());
    policy.reference = peak;
    const auto sp = threshold_sparsify(S, policy);
    report.trace.push_back({epoch, full_objective(), sp.sparsity_loose, sp.sparsity_tight,
                            factor_balance_gap(run.U, run.W)});
  };
  record(0);

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < N; start += batch) {
      const std::vector<std::size_t> cols(order.begin() + static_cast<std::ptrdiff_t>(start),
                                          order.begin() + static_cast<std::ptrdiff_t>(std::min(N, start + batch)));
      const Tensor Xb = gather_columns(X, cols);
      ParamSet slice{{"U", gather_columns(run.U, cols)}, {"W", gather_columns(run.W, cols)}};
      // Moment buffers belong to the slice, so reset them per batch.
      factor_state.velocity.clear();
      factor_state.first_moment.clear();
      factor_state.second_moment.clear();
      for (std::size_t s = 0; s < cfg.steps_per_batch; ++s) {
        Graph g;
        Var U = g.parameter("U", slice.at("U"));
        Var W = g.parameter("W", slice.at("W"));
        Var loss = code_objective(g, Xb, run.B, U, W, kappa);
        if (!std::isfinite(loss.value().item())) {
          report.aborted = true;
          report.diagnosis = "non-finite code objective in epoch " + std::to_string(epoch) + " (lr " +
                             std::to_string(cfg.train.optimizer.lr) + ")";
          break;
        }
        first_order_step(slice, g.backward(loss), factor_state);
        ++factor_steps;
      }
      if (report.aborted) break;
      scatter_columns(run.U, slice.at("U"), cols);
      scatter_columns(run.W, slice.at("W"), cols);

      if (cfg.dictionary_steps > 0) {
        const Tensor Sb = hadamard(slice.at("U"), slice.at("W"));
        ObjectiveFn fb = [&](const ParamSet& p, GradientMap& grads) {
          Graph g;
          Var Bt = g.parameter("B", p.at("B"));
          Var loss = dictionary_objective(g, Xb, Bt, Sb);
          grads = g.backward(loss);
          return loss.value().item();
        };
        ParamSet bp{{"B", run.B}};
        OptimizerState bstate(bcfg);
        for (std::size_t s = 0; s < cfg.dictionary_steps; ++s) {
          const auto r = lbfgs_step(bp, fb, bstate);
          if (r.stationary) break;
          if (!(r.value_after < r.value_before)) {
            GradientMap grads;
            fb(bp, grads);
            adam_step(bp, grads, adam_state);
            ++fallbacks;
          }
        }
        run.B = bp.at("B");
        oracles::normalize_columns(run.B);
        worst_norm_error = std::max(worst_norm_error, column_norm_error(run.B));
      }
    }
    if (report.aborted) break;
    if (cfg.normalize_rows) {
      for (std::size_t j = 0; j < k; ++j) {
        double nrm = 0.0;
        for (std::size_t c = 0; c < N; ++c) nrm += run.W(j, c) * run.W(j, c);
        nrm = std::sqrt(nrm);
        if (nrm == 0.0) continue;
        for (std::size_t c = 0; c < N; ++c) {
          run.W(j, c) /= nrm;
          run.U(j, c) *= nrm;
        }
      }
    }
    record(epoch);
    if (!std::isfinite(report.trace.back().objective)) {
      report.aborted = true;
      report.diagnosis = "non-finite objective after epoch " + std::to_string(epoch);
      break;
    }
  }
  report.steps = factor_steps;
  report.timings["train"] = clock.seconds();
  if (report.aborted) return run;

  const Tensor S = hadamard(run.U, run.W);
  const auto sp = threshold_sparsify(S, policy);
  run.S = sp.tight;
  report.params["B"] = run.B;
  report.params["S"] = run.S;
  report.balance_gap = factor_balance_gap(run.U, run.W);
  report.metrics["objective"] = report.trace.back().objective;
  report.metrics["l1_objective"] = oracles::sparse_coding_objective(X, run.B, run.S, kappa);
  report.metrics["sparsity_loose"] = sp.sparsity_loose;
  report.metrics["sparsity_tight"] = sp.sparsity_tight;
  report.metrics["column_norm_error"] = worst_norm_error;
  report.metrics["dictionary_fallbacks"] = static_cast<double>(fallbacks);
  report.metrics["reconstruction_error"] = (X - matmul(run.B, S)).squared_norm() / std::max(X.squared_norm(), 1e-300);
  return run;
}

}  // namespace spred
