#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <set>

#include "spred/data.hpp"
#include "spred/feature_selection.hpp"
#include "spred/lasso_tasks.hpp"
#include "spred/node_sparsity.hpp"
#include "spred/oracles.hpp"
#include "spred/prune.hpp"
#include "spred/random.hpp"
#include "spred/sparse_coding.hpp"

using namespace spred;

namespace {

TrainConfig lbfgs_config(std::size_t steps = 20000) {
  TrainConfig cfg;
  cfg.optimizer.kind = OptimizerKind::lbfgs;
  cfg.optimizer.lr = 1.0;
  cfg.max_steps = steps;
  cfg.seed = 3;
  return cfg;
}

// Least squares through the normal equations, independent of the library solvers.
Tensor least_squares(const Tensor& X, const Tensor& y) {
  Eigen::MatrixXd A(X.rows(), X.cols());
  Eigen::VectorXd b(X.rows());
  for (std::size_t i = 0; i < X.rows(); ++i) {
    b(i) = y[i];
    for (std::size_t j = 0; j < X.cols(); ++j) A(i, j) = X(i, j);
  }
  const Eigen::VectorXd w = A.colPivHouseholderQr().solve(b);
  return Tensor(Shape{X.cols()}, std::vector<double>(w.data(), w.data() + w.size()));
}

double linf(const Tensor& a, const Tensor& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

SolveReport without_timings(SolveReport r) {
  r.timings.clear();
  return r;
}

}  // namespace

TEST_CASE("orthonormal lasso generator") {
  const auto inst = gen_orthonormal_lasso(30, 0.4, 0.0, 5, 0.0);
  const Tensor G = matmul_tn(inst.problem.X, inst.problem.X);
  CHECK(linf(G, Tensor::identity(30)) <= 1e-10);
  CHECK(linf(inst.closed_form, inst.w_true) <= 1e-10);
  CHECK(zero_fraction(inst.w_true) == doctest::Approx(0.4));
  const auto again = gen_orthonormal_lasso(30, 0.4, 0.0, 5, 0.0);
  CHECK(again.problem.X == inst.problem.X);
  CHECK(again.problem.y == inst.problem.y);
  CHECK_THROWS_AS(gen_orthonormal_lasso(0, 0.4, 0.0, 5), std::invalid_argument);
  CHECK_THROWS_AS(gen_orthonormal_lasso(10, 1.5, 0.0, 5), std::invalid_argument);
}

TEST_CASE("spred lasso matches the closed form") {
  auto inst = gen_orthonormal_lasso(40, 0.5, 0.1, 8, 0.3);
  const auto r = run_spred_lasso(inst.problem, lbfgs_config());
  REQUIRE_FALSE(r.aborted);
  CHECK(r.converged);
  REQUIRE(r.merge_step.has_value());
  const Tensor& w = r.params.at("w");
  CHECK(linf(w, inst.closed_form) <= 1e-3);
  for (std::size_t i = 0; i < w.size(); ++i) CHECK((w[i] == 0.0) == (inst.closed_form[i] == 0.0));
  CHECK(r.balance_gap <= 1e-3 * std::max(w.abs_max(), 1e-12));
  CHECK(r.metrics.at("kkt_residual") <= 1e-2);
  CHECK(r.trace.size() == r.steps + 1);
}

TEST_CASE("spred lasso at kappa zero is least squares") {
  auto inst = gen_random_lasso(60, 8, 3, 0.2, 4, 0.0);
  const auto r = run_spred_lasso(inst.problem, lbfgs_config());
  REQUIRE_FALSE(r.aborted);
  CHECK(linf(r.params.at("w"), least_squares(inst.problem.X, inst.problem.y)) <= 1e-4);
}

TEST_CASE("spred lasso above the critical kappa returns zero") {
  auto inst = gen_random_lasso(40, 10, 3, 0.2, 6, 0.0);
  inst.problem.kappa = 1.01 * matmul_tn(inst.problem.X, inst.problem.y).abs_max();
  const auto r = run_spred_lasso(inst.problem, lbfgs_config());
  REQUIRE_FALSE(r.aborted);
  CHECK(zero_fraction(r.params.at("w")) == 1.0);
}

TEST_CASE("divergence aborts with a diagnosis") {
  auto inst = gen_random_lasso(40, 10, 3, 0.2, 6, 0.1);
  TrainConfig cfg;
  cfg.optimizer.lr = 1e6;
  cfg.max_steps = 200;
  const auto r = run_spred_lasso(inst.problem, cfg);
  CHECK(r.aborted);
  CHECK_FALSE(r.diagnosis.empty());
}

TEST_CASE("naive l1 at kappa zero follows plain gradient descent") {
  auto inst = gen_random_lasso(30, 6, 2, 0.1, 9, 0.0);
  TrainConfig cfg;
  cfg.optimizer.lr = 0.01;
  cfg.max_steps = 50;
  cfg.seed = 2;
  const auto r = run_naive_l1_lasso(inst.problem, cfg);
  Tensor w = effective_value(lasso_model(inst.problem, cfg).sparse.at("w"));
  const Tensor& X = inst.problem.X;
  const Tensor& y = inst.problem.y;
  for (std::size_t s = 0; s <= cfg.max_steps; ++s) {
    Tensor res = matmul(X, w) - y;
    CHECK(r.trace[s].objective == doctest::Approx(res.squared_norm()).epsilon(1e-12));
    Tensor grad = matmul_tn(X, res);
    grad *= 2.0 * cfg.optimizer.lr;
    w -= grad;
  }
  CHECK_THROWS_AS(run_naive_l1_lasso(inst.problem, lbfgs_config()), std::invalid_argument);
}

TEST_CASE("naive l1 produces no exact zeros") {
  auto inst = gen_orthonormal_lasso(40, 0.5, 0.1, 8, 0.3);
  TrainConfig cfg;
  cfg.optimizer.lr = 0.01;
  cfg.max_steps = 3000;
  const auto r = run_naive_l1_lasso(inst.problem, cfg);
  CHECK(r.metrics.at("exact_zero_rate") < 0.05);
}

TEST_CASE("lasso runs are reproducible") {
  auto inst = gen_random_lasso(40, 10, 3, 0.2, 6, 0.2);
  const auto a = run_spred_lasso(inst.problem, lbfgs_config());
  const auto b = run_spred_lasso(inst.problem, lbfgs_config());
  CHECK(without_timings(a) == without_timings(b));
}

TEST_CASE("oracle comparison metrics") {
  auto inst = gen_random_lasso(50, 12, 3, 0.2, 10, 0.5);
  auto r = run_spred_lasso(inst.problem, lbfgs_config());
  compare_with_oracle(r, inst.problem);
  CHECK(r.config.at("oracle") == "coordinate-descent");
  CHECK(std::abs(r.metrics.at("relative_objective_gap")) <= 1e-3);
  CHECK(r.metrics.at("support_mismatch") == 0.0);
}

TEST_CASE("bench rows cover every milestone deterministically") {
  BenchOptions opt;
  opt.samples = 40;
  opt.k_true = 4;
  opt.spred = lbfgs_config(5000);
  const auto a = bench_scaling({50, 100}, {BenchSolver::spred, BenchSolver::coordinate_descent}, opt);
  CHECK(a.size() == 12);
  const auto b = bench_scaling({50, 100}, {BenchSolver::spred, BenchSolver::coordinate_descent}, opt);
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].iterations == b[i].iterations);
    CHECK(a[i].objective == b[i].objective);
  }
  for (std::size_t i = 0; i < a.size(); i += 3) {
    CHECK(a[i].milestone == 0.75);
    CHECK(a[i + 2].milestone == 1.0);
  }
  CHECK_THROWS_AS(parse_bench_solver("lars"), std::invalid_argument);
}

TEST_CASE("sparse coding keeps unit columns and decreases the objective") {
  const Tensor img = data::synthetic_texture(48, 1);
  const Tensor X = data::extract_patches(img, 4, 120, 2);
  SparseCodingConfig cfg;
  cfg.k = 12;
  cfg.kappa = 0.02;
  cfg.epochs = 8;
  cfg.train.optimizer.lr = 0.1;
  cfg.train.batch_size = 60;
  cfg.train.seed = 4;
  const auto run = run_sparse_coding(X, cfg);
  REQUIRE_FALSE(run.report.aborted);
  CHECK(run.report.metrics.at("column_norm_error") <= 1e-8);
  for (std::size_t j = 0; j < run.B.cols(); ++j) CHECK(run.B.col(j).norm() == doctest::Approx(1.0).epsilon(1e-12));
  const auto& t = run.report.trace;
  REQUIRE(t.size() >= 2);
  CHECK(t.back().objective < t.front().objective);
}

TEST_CASE("sparse coding without penalty reconstructs exactly") {
  Rng rng(3);
  const Tensor X = random_normal({4, 6}, 1.0, rng);
  SparseCodingConfig cfg;
  cfg.k = 6;
  cfg.kappa = 0.0;
  cfg.epochs = 400;
  cfg.train.optimizer.lr = 0.05;
  cfg.train.seed = 1;
  const auto run = run_sparse_coding(X, cfg);
  CHECK(run.report.metrics.at("reconstruction_error") <= 1e-4);
}

TEST_CASE("feature selection task invariants") {
  const auto t = gen_feature_selection(200, 60, 6, Nonlinearity::mixed, 11);
  CHECK(t.support.size() == 6);
  for (auto i : t.support) CHECK(i < 60);
  std::set<std::size_t> all;
  for (const auto* part : {&t.split.train, &t.split.dev, &t.split.test}) {
    for (auto i : *part) CHECK(all.insert(i).second);
  }
  CHECK(all.size() == 200);
  CHECK(t.split.train.size() == 120);
  CHECK(t.split.test.size() == 40);
  std::size_t ones = 0;
  for (auto l : t.data.labels) ones += l;
  CHECK(std::abs(static_cast<double>(ones) - 100.0) <= 10.0);
  const auto again = gen_feature_selection(200, 60, 6, Nonlinearity::mixed, 11);
  CHECK(again.data.X == t.data.X);
  CHECK(again.data.labels == t.data.labels);
  CHECK(again.support == t.support);
  CHECK_THROWS_AS(gen_feature_selection(100, 5, 6, Nonlinearity::linear, 1), std::invalid_argument);
  CHECK_THROWS_AS(parse_nonlinearity("cubic"), std::invalid_argument);
}

TEST_CASE("the planted task is learnable from its support") {
  auto t = gen_feature_selection(300, 40, 5, Nonlinearity::mixed, 12, {2, 1.0, 0.0});
  data::LabeledData only = t.data;
  only.X = Tensor(Shape{t.data.samples(), t.support.size()});
  for (std::size_t i = 0; i < t.data.samples(); ++i) {
    for (std::size_t j = 0; j < t.support.size(); ++j) only.X(i, j) = t.data.X(i, t.support[j]);
  }
  FeatureSelectionTask sub{only, {}, t.split};
  FeatureSelectionConfig cfg;
  cfg.train = lbfgs_config(2000);
  cfg.eval_every = 50;
  const auto r = fit_feature_model(sub, FeatureModel::mlp_weight_decay, 1e-4, cfg);
  CHECK(r.metrics.at("test_accuracy") > 0.9);
}

TEST_CASE("support f1") {
  CHECK(support_f1({1, 2, 3}, {1, 2, 3}) == 1.0);
  CHECK(support_f1({}, {1, 2}) == 0.0);
  CHECK(support_f1({1, 4}, {1, 2}) == doctest::Approx(0.5));
}

TEST_CASE("feature selection without penalty keeps every feature") {
  auto t = gen_feature_selection(120, 30, 4, Nonlinearity::linear, 13, {2, 1.0, 0.0});
  FeatureSelectionConfig cfg;
  cfg.hidden = {8};
  cfg.train = lbfgs_config(200);
  const auto r = fit_feature_model(t, FeatureModel::ensemble, 0.0, cfg);
  CHECK(r.metrics.at("selected") == 30.0);
}

TEST_CASE("shared mask recovers the support; independent masks select per head") {
  auto t = gen_feature_selection(200, 60, 6, Nonlinearity::mixed, 14, {2, 1.0, 0.0});
  FeatureSelectionConfig cfg;
  cfg.hidden = {16};
  cfg.train = lbfgs_config(1500);
  cfg.train.optimizer.max_backtracks = 10;
  cfg.eval_every = 50;
  const auto shared = fit_feature_model(t, FeatureModel::ensemble, 0.1, cfg);
  CHECK(shared.metrics.at("f1") >= 0.8);
  const auto indep = fit_feature_model(t, FeatureModel::independent_masks, 0.1, cfg);
  const auto& m = indep.metrics;
  CHECK(m.at("common_support") <= std::min(m.at("selected_linear"), m.at("selected_mlp")));
  CHECK(m.at("support_jaccard") >= 0.0);
  CHECK(m.at("support_jaccard") <= 1.0);
  CHECK(shared.metrics.count("selected_linear") == 0);
}

TEST_CASE("node sparsity helpers") {
  Tensor W2 = Tensor::matrix({{0.0, 0.0}, {1.0, -1.0}, {1e-6, 0.0}});
  CHECK(node_sparsity(W2, 1e-4) == doctest::Approx(2.0 / 3.0));
  CHECK(weight_sparsity({&W2}, 1e-4) == doctest::Approx(4.0 / 6.0));
  CHECK(pearson_correlation({1, 2, 3}, {2, 4, 6}) == doctest::Approx(1.0));
  CHECK(pearson_correlation({1, 2, 3}, {3, 2, 1}) == doctest::Approx(-1.0));
  CHECK(std::isnan(pearson_correlation({1, 1, 1}, {1, 2, 3})));
  CHECK(count_inversions({0, 0.1, 0.05, 0.2, 0.1}) == 2);
}

TEST_CASE("node sparsity sweep") {
  const auto data = data::nonnegative_mixture(120, 12, 4, 3.0, 1.0, 5);
  NodeSparsityConfig cfg;
  cfg.train.optimizer.lr = 0.5;
  cfg.train.max_steps = 1500;
  cfg.train.seed = 1;
  const auto spec = MlpSpec::make({12, 30, 4}, Activation::relu, false);
  const std::vector<double> grid{0.0, 0.01, 0.1};
  const auto s = run_node_sparsity_sweep(spec, data, grid, cfg);
  REQUIRE(s.points.size() == 3);
  CHECK(s.points[0].node_sparsity == 0.0);
  CHECK(s.points[2].node_sparsity >= s.points[1].node_sparsity);
  CHECK(s.points[2].node_sparsity > 0.5);
  CHECK(s.points[0].a_norms.size() == 30);

  cfg.threads = 3;
  const auto par = run_node_sparsity_sweep(spec, data, grid, cfg);
  for (std::size_t i = 0; i < 3; ++i) CHECK(par.points[i].a_norms == s.points[i].a_norms);

  CHECK_THROWS_AS(run_node_sparsity_sweep(MlpSpec::make({12, 30, 4}, Activation::relu, true), data, grid, cfg),
                  std::invalid_argument);
  CHECK_THROWS_AS(run_node_sparsity_sweep(MlpSpec::make({12, 30, 30, 4}, Activation::relu, false), data, grid, cfg),
                  std::invalid_argument);
  CHECK_THROWS_AS(run_node_sparsity_sweep(spec, data, {0.1}, cfg), std::invalid_argument);
}

TEST_CASE("prune curve basics") {
  const auto all = data::clustered_classes(300, 6, 4, 2, 3.0, 0.7, 2);
  const auto split = data::split_indices(all.samples(), 0.5, 0.0, 3);
  PruneConfig cfg;
  cfg.kappa = 1e-3;
  cfg.train = lbfgs_config(200);
  cfg.thresholds = {0.0, 1e-3, 0.1, 2.0};
  cfg.finetune_steps = 20;
  cfg.retrain_steps = 20;
  const auto spec = MlpSpec::make({6, 16, 2}, Activation::relu, true);
  const auto c = run_prune_finetune(spec, all.subset(split.train), all.subset(split.test), cfg);
  REQUIRE(c.points.size() == 4);
  CHECK(c.points[0].compression_ratio == 1.0);
  CHECK(c.points[0].kept == c.total_weights);
  CHECK(c.points[0].pruned_accuracy == c.unpruned_accuracy);
  for (std::size_t i = 1; i < c.points.size(); ++i) {
    CHECK(c.points[i].kept <= c.points[i - 1].kept);
    CHECK(c.points[i].compression_ratio >= c.points[i - 1].compression_ratio);
  }
  CHECK(c.points.back().degenerate);
  CHECK(c.total_weights == 6 * 16 + 16 * 2);
  CHECK(c.report.series.at("threshold").size() == 4);
}
