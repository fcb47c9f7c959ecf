#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "fd_oracle.hpp"
#include "spred/random.hpp"
#include "spred/spred.hpp"

using namespace spred;

namespace {

// L(V) = ||V - c||^2 on a single sparse parameter "v".
SpredModel quadratic_model(SpredParam p, Tensor c) {
  SpredModel m;
  m.sparse.emplace("v", std::move(p));
  m.dense_decay = 0.0;
  m.base_loss = [c](Graph& g, const ValueMap& vals) { return squared_error(vals.at("v"), g.constant(c)); };
  return m;
}

SpredModel zero_loss_model(SpredParam p) {
  SpredModel m;
  m.sparse.emplace("v", std::move(p));
  m.dense_decay = 0.0;
  m.base_loss = [](Graph& g, const ValueMap&) { return g.constant(Tensor::scalar(0.0)); };
  return m;
}

double objective(const SpredModel& m) {
  Graph g;
  return spred_objective(m, g).value().item();
}

}  // namespace

TEST_CASE("make_spred_param defaults and validation") {
  auto p = make_spred_param({5}, 0.3, SpredMode::elementwise, InitScheme::sqrt_standard, 1);
  CHECK(p.alpha == 0.3);
  CHECK(p.beta == 0.3);
  CHECK(p.U.shape() == p.W.shape());
  CHECK_NOTHROW(p.validate());
  CHECK_THROWS_AS(make_spred_param({5}, -1.0, SpredMode::elementwise, InitScheme::sqrt_standard, 1),
                  std::invalid_argument);
  CHECK_THROWS_AS(make_spred_param({0}, 1.0, SpredMode::elementwise, InitScheme::sqrt_standard, 1), ShapeError);
  CHECK_THROWS_AS(parse_init("kaiming"), std::invalid_argument);
}

TEST_CASE("kappa zero contributes no penalty") {
  auto p = make_spred_param({7}, 0.0, SpredMode::elementwise, InitScheme::factor_unit, 2);
  CHECK(objective(zero_loss_model(p)) == 0.0);
}

TEST_CASE("sqrt-standard product matches standard initialization in spread") {
  // Monte-Carlo oracle: 10^4 products, fan-in 100 -> std 0.1.
  auto p = make_spred_param({100, 100}, 1.0, SpredMode::elementwise, InitScheme::sqrt_standard, 3);
  const Tensor v = effective_value(p);
  const double mu = v.sum() / static_cast<double>(v.size());
  double var = 0.0;
  for (double x : v.data()) var += (x - mu) * (x - mu);
  const double sd = std::sqrt(var / static_cast<double>(v.size() - 1));
  CHECK(sd == doctest::Approx(0.1).epsilon(0.2));

  auto q = make_spred_param({100, 100}, 1.0, SpredMode::elementwise, InitScheme::factor_unit, 3);
  double su = 0.0;
  for (double x : q.U.data()) su += x * x;
  CHECK(std::sqrt(su / 1e4) == doctest::Approx(1.0).epsilon(0.05));
}

TEST_CASE("same seed gives bit-identical factors") {
  auto a = make_spred_param({4, 3}, 0.1, SpredMode::elementwise, InitScheme::sqrt_standard, 42);
  auto b = make_spred_param({4, 3}, 0.1, SpredMode::elementwise, InitScheme::sqrt_standard, 42);
  CHECK(a.U == b.U);
  CHECK(a.W == b.W);
}

TEST_CASE("effective value") {
  CHECK(effective_value(spred_param_from_factors(Tensor::vector({1, 2}), Tensor::vector({3, -4}), 1.0)) ==
        Tensor::vector({3, -8}));
  CHECK(effective_value(spred_param_from_factors(Tensor::scalar(2), Tensor::vector({1, 0, -1}), 1.0,
                                                 SpredMode::group)) == Tensor::vector({2, 0, -2}));
  CHECK(effective_value(spred_param_from_factors(Tensor::vector({0, 0}), Tensor::vector({5, -7}), 1.0)) ==
        Tensor::vector({0, 0}));
}

TEST_CASE("spred objective examples") {
  auto p = spred_param_from_factors(Tensor::vector({1, -2}), Tensor::vector({1, 2}), 1.0);
  CHECK(objective(zero_loss_model(p)) == 10.0);
  CHECK(l1_objective(zero_loss_model(p), effective_values(zero_loss_model(p))) == 10.0);

  // kappa = 0 reduces to the base loss at U (.) W.
  auto q = spred_param_from_factors(Tensor::vector({0.5, 2}), Tensor::vector({3, -1}), 0.0);
  auto m = quadratic_model(q, Tensor::vector({1, 1}));
  CHECK(objective(m) == doctest::Approx((1.5 - 1) * (1.5 - 1) + 9.0).epsilon(1e-15));
}

TEST_CASE("l1 objective examples") {
  // 1-D L = (w - c)^2 + |w| at c = 1.5, w = 1.
  auto p = spred_param_from_factors(Tensor::vector({1}), Tensor::vector({1}), 0.5);
  auto m = quadratic_model(p, Tensor::vector({1.5}));
  CHECK(l1_objective(m, {{"v", Tensor::vector({1.0})}}) == doctest::Approx(1.25));
  CHECK(l1_objective(m, {{"v", Tensor::vector({0.0})}}) == doctest::Approx(2.25));
  // Group mode charges 2 kappa ||V||_2: one group (3, 4) at kappa = 0.5 adds 5.
  auto gp = spred_param_from_factors(Tensor::scalar(1), Tensor::vector({0, 0}), 0.5, SpredMode::group);
  auto gm = zero_loss_model(gp);
  CHECK(l1_objective(gm, {{"v", Tensor::vector({3, 4})}}) == doctest::Approx(5.0));
}

TEST_CASE("rebalance examples") {
  auto p = spred_param_from_factors(Tensor::vector({4}), Tensor::vector({1}), 1.0);
  auto r = rebalance(p);
  CHECK(r.U[0] == 2.0);
  CHECK(r.W[0] == 2.0);
  CHECK(penalty(p) == 17.0);
  CHECK(penalty(r) == 8.0);

  auto neg = rebalance(spred_param_from_factors(Tensor::vector({-9}), Tensor::vector({1}), 1.0));
  CHECK(std::abs(neg.U[0]) == 3.0);
  CHECK(std::abs(neg.W[0]) == 3.0);
  CHECK(neg.U[0] * neg.W[0] == -9.0);

  auto bal = spred_param_from_factors(Tensor::vector({2, -3}), Tensor::vector({-2, 3}), 1.0);
  auto same = rebalance(bal);
  CHECK(same.U == bal.U);
  CHECK(same.W == bal.W);
}

TEST_CASE("group rebalance") {
  auto p = spred_param_from_factors(Tensor::scalar(8), Tensor::vector({0.6, 0.8}), 1.0, SpredMode::group);
  auto r = rebalance(p);
  CHECK(balance_gap(r) <= 1e-12);
  CHECK(max_abs_diff(effective_value(r), effective_value(p)) <= 1e-12);
  // Group identity: kappa (u^2 + ||W||^2) = 2 kappa ||u W||_2 when balanced.
  CHECK(penalty(r) == doctest::Approx(2.0 * effective_value(r).norm()).epsilon(1e-12));
  CHECK(penalty(r) < penalty(p));
}

TEST_CASE("balance gap") {
  CHECK(balance_gap(spred_param_from_factors(Tensor::vector({1, -3}), Tensor::vector({-1, 3}), 1.0)) == 0.0);
  CHECK(balance_gap(spred_param_from_factors(Tensor::vector({1, 3}), Tensor::vector({1, 1}), 1.0)) == 2.0);
  Rng rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    auto p = spred_param_from_factors(random_normal({6}, 2.0, rng), random_normal({6}, 0.3, rng), 0.7);
    CHECK(balance_gap(rebalance(p)) <= 1e-12);
  }
}

TEST_CASE("threshold sparsify") {
  SparsifyPolicy abs{1e-4, 1e-6, ThresholdMeasure::absolute};
  auto r = threshold_sparsify(Tensor::vector({1e-7, 0.5}), abs);
  CHECK(r.loose == Tensor::vector({0, 0.5}));
  CHECK(r.tight == Tensor::vector({0, 0.5}));
  CHECK(r.sparsity_loose == 0.5);
  CHECK(r.sparsity_tight == 0.5);

  auto z = threshold_sparsify(Tensor(Shape{5}, 0.0), SparsifyPolicy{});
  CHECK(z.sparsity_loose == 1.0);
  CHECK(z.sparsity_tight == 1.0);

  const Tensor v = Tensor::vector({1e-12, -3, 0.2});
  auto id = threshold_sparsify(v, SparsifyPolicy{0.0, 0.0, ThresholdMeasure::absolute});
  CHECK(id.loose == v);
  CHECK_THROWS_AS(threshold_sparsify(v, SparsifyPolicy{1e-6, 1e-3, ThresholdMeasure::absolute}),
                  std::invalid_argument);
}

TEST_CASE("two-threshold convergence rule") {
  SparsityHistory constant(20, {0.4, 0.4});
  CHECK(converged_by_two_thresholds(constant, 10));
  SparsityHistory apart(20, {0.9, 0.7});
  CHECK_FALSE(converged_by_two_thresholds(apart, 10));
  CHECK_THROWS_AS(converged_by_two_thresholds(SparsityHistory{}, 3), std::invalid_argument);

  // Simulated series: tight sparsity catches up with loose at step t = 12.
  const std::size_t t = 12, window = 5;
  SparsityHistory series;
  for (std::size_t step = 0; step < 30; ++step) {
    series.emplace_back(0.8, step < t ? 0.5 + 0.02 * static_cast<double>(step) : 0.8);
    const bool expected = step + 1 >= t + window;
    CHECK(converged_by_two_thresholds(series, window) == expected);
  }
  CHECK(merge_index(series) == t);
}

TEST_CASE("objective identity holds for balanced factors") {
  Rng rng(11);
  for (int trial = 0; trial < 100; ++trial) {
    Tensor U = random_normal({8}, 1.0, rng);
    Tensor W = U;
    for (std::size_t i = 0; i < 8; ++i) {
      if (rng() % 2) W[i] = -W[i];
    }
    auto m = quadratic_model(spred_param_from_factors(U, W, 0.37), random_normal({8}, 1.0, rng));
    const double a = objective(m);
    const double b = l1_objective(m, effective_values(m));
    CHECK(std::abs(a - b) <= 1e-12 * std::abs(b));
  }
}

TEST_CASE("spred objective bounds the l1 objective from above") {
  Rng rng(12);
  for (int trial = 0; trial < 100; ++trial) {
    auto m = quadratic_model(spred_param_from_factors(random_normal({6}, 1.0, rng), random_normal({6}, 1.0, rng), 0.5),
                             random_normal({6}, 1.0, rng));
    const double rs = objective(m);
    const double l1 = l1_objective(m, effective_values(m));
    CHECK(rs > l1);
    auto balanced = m;
    balanced.sparse.at("v") = rebalance(m.sparse.at("v"));
    CHECK(objective(balanced) <= rs);
    CHECK(objective(balanced) == doctest::Approx(l1).epsilon(1e-12));
  }
}

TEST_CASE("general split rescaling preserves the objective") {
  Rng rng(13);
  for (int trial = 0; trial < 50; ++trial) {
    const double kappa = 0.2 + 0.1 * trial;
    const double alpha = kappa * std::exp(std::uniform_real_distribution<double>(-2, 2)(rng));
    const double beta = kappa * kappa / alpha;
    auto sym = quadratic_model(spred_param_from_factors(random_normal({5}, 1.0, rng), random_normal({5}, 1.0, rng), kappa),
                               random_normal({5}, 1.0, rng));
    auto split = sym;
    split.sparse.at("v") = rescale_to_split(sym.sparse.at("v"), alpha, beta);
    CHECK_NOTHROW(split.sparse.at("v").validate());
    CHECK(objective(split) == doctest::Approx(objective(sym)).epsilon(1e-10));
  }
}

TEST_CASE("spred objective gradient matches finite differences") {
  Rng rng(14);
  SpredModel m;
  const Tensor X = random_normal({12, 10}, 1.0, rng);
  const Tensor y = random_normal({12}, 1.0, rng);
  m.sparse.emplace("w", make_spred_param({10}, 0.4, SpredMode::elementwise, InitScheme::sqrt_standard, 15));
  m.base_loss = [X, y](Graph& g, const ValueMap& v) { return squared_error(matmul(g.constant(X), v.at("w")), g.constant(y)); };
  const auto analytic = evaluate(m).grads;
  auto f = [&](const std::map<std::string, Tensor>& at) {
    SpredModel c = m;
    assign(c, at);
    return evaluate(c).value;
  };
  auto numeric = spred::testing::finite_difference_gradient(f, parameters(m));
  CHECK(spred::testing::relative_gradient_error(analytic, numeric) <= 1e-5);
}
