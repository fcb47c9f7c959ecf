#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>

#include "spred/optim.hpp"
#include "spred/random.hpp"

using namespace spred;

namespace {

OptimizerState sgd(double lr, double momentum = 0.0) {
  OptimizerConfig c;
  c.kind = OptimizerKind::sgd;
  c.lr = lr;
  c.momentum = momentum;
  return OptimizerState(c);
}

OptimizerState adam(double lr) {
  OptimizerConfig c;
  c.kind = OptimizerKind::adam;
  c.lr = lr;
  return OptimizerState(c);
}

// f(x) = 0.5 x^T A x - b^T x on a single parameter "x".
struct Quadratic {
  Eigen::MatrixXd A;
  Eigen::VectorXd b;

  double operator()(const ParamSet& p, GradientMap& g) const {
    const auto& t = p.at("x");
    Eigen::Map<const Eigen::VectorXd> x(t.data().data(), static_cast<Eigen::Index>(t.size()));
    const Eigen::VectorXd grad = A * x - b;
    g["x"] = Tensor::vector(std::vector<double>(grad.data(), grad.data() + grad.size()));
    return 0.5 * x.dot(A * x) - b.dot(x);
  }
};

Quadratic random_quadratic(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  const Tensor M = random_normal({n, n}, 1.0, rng);
  const Tensor r = random_normal({n}, 1.0, rng);
  Eigen::Map<const Eigen::Matrix<double, -1, -1, Eigen::RowMajor>> m(M.data().data(), n, n);
  Quadratic q;
  q.A = m.transpose() * m + Eigen::MatrixXd::Identity(n, n);
  q.b = Eigen::Map<const Eigen::VectorXd>(r.data().data(), n);
  return q;
}

}  // namespace

TEST_CASE("sgd step examples") {
  ParamSet p{{"w", Tensor::vector({1.0})}};
  auto state = sgd(0.1);
  sgd_step(p, {{"w", Tensor::vector({1.0})}}, state);
  CHECK(p["w"][0] == doctest::Approx(0.9).epsilon(1e-15));

  // L = w^2 with lr 0.1 contracts by 0.8 per step.
  ParamSet q{{"w", Tensor::vector({1.0})}};
  auto s2 = sgd(0.1);
  for (int k = 1; k <= 20; ++k) {
    sgd_step(q, {{"w", q["w"] * 2.0}}, s2);
    CHECK(q["w"][0] == doctest::Approx(std::pow(0.8, k)).epsilon(1e-12));
  }
  CHECK(s2.step == 20);
}

TEST_CASE("sgd momentum accumulates velocity") {
  ParamSet p{{"w", Tensor::vector({0.0})}};
  auto state = sgd(1.0, 0.5);
  const GradientMap g{{"w", Tensor::vector({1.0})}};
  sgd_step(p, g, state);
  sgd_step(p, g, state);
  CHECK(p["w"][0] == doctest::Approx(-2.5));
}

TEST_CASE("adam first step and scale invariance") {
  ParamSet p{{"w", Tensor::vector({0.0, 0.0})}};
  auto state = adam(0.01);
  adam_step(p, {{"w", Tensor::vector({5.0, -0.2})}}, state);
  CHECK(p["w"][0] == doctest::Approx(-0.01).epsilon(1e-6));
  CHECK(p["w"][1] == doctest::Approx(0.01).epsilon(1e-6));

  ParamSet a{{"w", Tensor::vector({1.0})}}, b = a;
  auto sa = adam(0.05), sb = adam(0.05);
  Rng rng(1);
  for (int k = 0; k < 30; ++k) {
    const double g = std::normal_distribution<double>(0.3, 1.0)(rng);
    adam_step(a, {{"w", Tensor::vector({g})}}, sa);
    adam_step(b, {{"w", Tensor::vector({1000.0 * g})}}, sb);
  }
  CHECK(a["w"][0] == doctest::Approx(b["w"][0]).epsilon(1e-5));
}

TEST_CASE("optimizer config validation") {
  OptimizerConfig c;
  c.lr = -1.0;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = {};
  c.memory = 0;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  CHECK_THROWS_AS(parse_optimizer("rmsprop"), std::invalid_argument);
  CHECK(parse_optimizer("lbfgs") == OptimizerKind::lbfgs);
}

TEST_CASE("lbfgs solves a strictly convex quadratic") {
  const auto q = random_quadratic(5, 7);
  ParamSet p{{"x", Tensor(Shape{5}, 0.0)}};
  OptimizerConfig c;
  c.kind = OptimizerKind::lbfgs;
  c.lr = 1.0;
  OptimizerState state(c);
  std::size_t iters = 0;
  double grad_norm = 1.0;
  double previous = 0.0;
  while (iters < 25) {
    auto step = lbfgs_step(p, q, state);
    ++iters;
    CHECK(step.value_after <= step.value_before);
    if (iters > 1) CHECK(step.value_before <= previous + 1e-14);
    previous = step.value_after;
    GradientMap g;
    q(p, g);
    grad_norm = g["x"].norm();
    if (grad_norm <= 1e-8) break;
  }
  CHECK(grad_norm <= 1e-8);
  CHECK(iters <= 25);
  const Eigen::VectorXd direct = q.A.ldlt().solve(q.b);
  for (std::size_t i = 0; i < 5; ++i) CHECK(p["x"][i] == doctest::Approx(direct(static_cast<Eigen::Index>(i))).epsilon(1e-7));
}

TEST_CASE("lbfgs takes a zero step at a stationary point") {
  const auto q = random_quadratic(3, 8);
  const Eigen::VectorXd opt = q.A.ldlt().solve(q.b);
  ParamSet p{{"x", Tensor::vector(std::vector<double>(opt.data(), opt.data() + 3))}};
  const ParamSet before = p;
  OptimizerConfig c;
  c.kind = OptimizerKind::lbfgs;
  OptimizerState state(c);
  // Zero the residual gradient exactly by shifting b.
  Quadratic exact = q;
  exact.b = q.A * opt;
  auto step = lbfgs_step(p, exact, state);
  if (step.grad_norm == 0.0) {
    CHECK(step.stationary);
    CHECK(p == before);
  } else {
    CHECK(step.grad_norm <= 1e-12);
    CHECK(max_abs_diff(p["x"], before.at("x")) <= 1e-12);
  }
}

TEST_CASE("lbfgs is monotone on a nonconvex loss") {
  // Rosenbrock in 2-D.
  ObjectiveFn rosen = [](const ParamSet& p, GradientMap& g) {
    const double x = p.at("x")[0], y = p.at("x")[1];
    g["x"] = Tensor::vector({-2 * (1 - x) - 400 * x * (y - x * x), 200 * (y - x * x)});
    return (1 - x) * (1 - x) + 100 * (y - x * x) * (y - x * x);
  };
  ParamSet p{{"x", Tensor::vector({-1.2, 1.0})}};
  OptimizerConfig c;
  c.kind = OptimizerKind::lbfgs;
  c.lr = 1.0;
  OptimizerState state(c);
  for (int k = 0; k < 200; ++k) {
    auto step = lbfgs_step(p, rosen, state);
    CHECK(step.value_after <= step.value_before);
    if (step.stationary) break;
  }
  CHECK(p["x"][0] == doctest::Approx(1.0).epsilon(1e-4));
  CHECK(p["x"][1] == doctest::Approx(1.0).epsilon(1e-4));
}

TEST_CASE("optimizer state serialization round-trips") {
  const auto q = random_quadratic(4, 9);
  ParamSet p{{"x", Tensor(Shape{4}, 0.5)}};
  OptimizerConfig c;
  c.kind = OptimizerKind::lbfgs;
  OptimizerState state(c);
  for (int k = 0; k < 3; ++k) lbfgs_step(p, q, state);
  const auto restored = deserialize_optimizer_state(serialize(state));
  CHECK(restored == state);

  // Resumed and uninterrupted runs coincide exactly.
  ParamSet p1 = p, p2 = p;
  OptimizerState s1 = state, s2 = restored;
  for (int k = 0; k < 3; ++k) {
    lbfgs_step(p1, q, s1);
    lbfgs_step(p2, q, s2);
  }
  CHECK(p1 == p2);

  auto a = adam(0.01);
  ParamSet w{{"w", Tensor::vector({1.0, 2.0})}};
  adam_step(w, {{"w", Tensor::vector({0.1, -0.3})}}, a);
  CHECK(deserialize_optimizer_state(serialize(a)) == a);
  CHECK_THROWS(deserialize_optimizer_state("{not json"));
}
