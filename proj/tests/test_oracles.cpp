#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "spred/linalg.hpp"
#include "spred/oracles.hpp"
#include "spred/random.hpp"

using namespace spred;
using namespace spred::oracles;

namespace {

LassoProblem random_problem(std::size_t n, std::size_t d, double kappa, std::uint64_t seed) {
  Rng rng(seed);
  LassoProblem p;
  p.X = random_normal({n, d}, 1.0, rng);
  Tensor w(Shape{d}, 0.0);
  for (std::size_t i = 0; i < d; i += 3) w[i] = 1.0 + static_cast<double>(i % 5);
  p.y = matmul(p.X, w) + random_normal({n}, 0.5, rng);
  p.kappa = kappa;
  return p;
}

LassoProblem orthonormal_problem(std::size_t d, double kappa, std::uint64_t seed) {
  Rng rng(seed);
  LassoProblem p;
  p.X = linalg::random_orthonormal(d, rng);
  p.y = random_normal({d}, 1.0, rng);
  p.kappa = kappa;
  return p;
}

}  // namespace

TEST_CASE("soft threshold") {
  CHECK(soft_threshold(3.0, 2.0) == 1.0);
  CHECK(soft_threshold(-3.0, 2.0) == -1.0);
  CHECK(soft_threshold(0.5, 2.0) == 0.0);
  CHECK(soft_threshold(-0.5, 2.0) == 0.0);
  CHECK(soft_threshold(Tensor::vector({3, 0.2}), 1.0) == Tensor::vector({2, 0}));
}

TEST_CASE("group soft threshold") {
  const Tensor v = group_soft_threshold(Tensor::vector({3, 4}), 2.5);
  CHECK(v[0] == doctest::Approx(1.5).epsilon(1e-15));
  CHECK(v[1] == doctest::Approx(2.0).epsilon(1e-15));
  CHECK(group_soft_threshold(Tensor::vector({3, 4}), 5.0) == Tensor::vector({0, 0}));
}

TEST_CASE("closed form lasso on an orthonormal design") {
  LassoProblem p{Tensor::identity(2), Tensor::vector({3, 0.2}), 1.0};
  CHECK(closed_form_lasso_orthonormal(p) == Tensor::vector({2, 0}));

  LassoProblem bad{Tensor::matrix({{1, 0}, {0, 2}}), Tensor::vector({1, 1}), 0.1};
  try {
    (void)closed_form_lasso_orthonormal(bad);
    FAIL("expected a rejection");
  } catch (const NonOrthonormalDesign& e) {
    CHECK(e.defect == doctest::Approx(3.0));
  }
}

TEST_CASE("coordinate descent matches the closed form on orthonormal designs") {
  for (double kappa : {0.0, 0.1, 0.5, 2.0}) {
    const auto p = orthonormal_problem(30, kappa, 21);
    const auto cd = coordinate_descent_lasso(p, 1e-12);
    CHECK(cd.converged);
    CHECK(max_abs_diff(cd.w, closed_form_lasso_orthonormal(p)) <= 1e-8);
  }
}

TEST_CASE("coordinate descent at kappa zero is least squares") {
  const auto p = random_problem(40, 12, 0.0, 22);
  const auto cd = coordinate_descent_lasso(p, 1e-13);
  CHECK(max_abs_diff(cd.w, linalg::least_squares(p.X, p.y)) <= 1e-8);
}

TEST_CASE("coordinate descent certificate") {
  for (double tol : {1e-6, 1e-9}) {
    const auto p = random_problem(50, 20, 3.0, 23);
    const auto cd = coordinate_descent_lasso(p, tol);
    CHECK(cd.converged);
    CHECK(lasso_kkt_residual(p, cd.w) <= 10 * tol);
  }
  const auto big = random_problem(20, 8, 1e6, 24);
  CHECK(coordinate_descent_lasso(big, 1e-10).w == Tensor(Shape{8}, 0.0));
}

TEST_CASE("proximal gradient agrees with coordinate descent") {
  const auto p = random_problem(60, 25, 4.0, 25);
  const auto cd = coordinate_descent_lasso(p, 1e-12);
  for (auto variant : {ProxVariant::ista, ProxVariant::fista}) {
    const auto r = ista_fista_lasso(p, variant, 1e-15);
    CHECK(r.converged);
    CHECK(max_abs_diff(r.w, cd.w) <= 1e-6);
  }
}

TEST_CASE("one ista step with step one half solves the orthonormal problem") {
  const auto p = orthonormal_problem(10, 0.3, 26);
  const Tensor w = ista_step(p, Tensor(Shape{10}, 0.0), 0.5);
  CHECK(max_abs_diff(w, closed_form_lasso_orthonormal(p)) <= 1e-12);
  Rng seeded(3);
  const Tensor again = ista_step(p, random_normal({10}, 1.0, seeded), 0.5);
  CHECK(max_abs_diff(again, closed_form_lasso_orthonormal(p)) <= 1e-12);
}

TEST_CASE("spectral norm of the gram matrix") {
  Rng rng(27);
  const Tensor Q = linalg::random_orthonormal(6, rng);
  CHECK(gram_spectral_norm(Q) == doctest::Approx(1.0).epsilon(1e-10));
  CHECK(gram_spectral_norm(Tensor::matrix({{3, 0}, {0, 1}})) == doctest::Approx(9.0).epsilon(1e-10));
}

TEST_CASE("group lasso with singleton groups is the lasso") {
  const auto p = random_problem(40, 10, 2.0, 28);
  GroupLassoProblem gp{p, {}};
  for (std::size_t i = 0; i < 10; ++i) gp.groups.push_back({i});
  const auto g = group_lasso_prox(gp, 1e-15);
  CHECK(max_abs_diff(g.w, coordinate_descent_lasso(p, 1e-12).w) <= 1e-6);
  CHECK(group_lasso_objective(gp, g.w) == doctest::Approx(lasso_objective(p, g.w)));
}

TEST_CASE("group lasso certificates") {
  auto p = random_problem(60, 12, 6.0, 29);
  GroupLassoProblem gp{p, {{0, 1, 2}, {3, 4, 5}, {6, 7, 8}, {9, 10, 11}}};
  const auto g = group_lasso_prox(gp, 1e-15);
  // Residual relative to the scale of the gradient at zero.
  const double scale = matmul_tn(p.X, p.y).abs_max();
  CHECK(group_lasso_kkt_residual(gp, g.w) <= 1e-7 * scale);
  GroupLassoProblem overlap{p, {{0, 1}, {1, 2}}};
  CHECK_THROWS_AS(overlap.validate(), std::invalid_argument);
}

TEST_CASE("alternating sparse coding") {
  Rng rng(30);
  // Exact low-rank data: kappa = 0 should drive the residual to zero.
  Tensor B0 = random_normal({6, 3}, 1.0, rng);
  normalize_columns(B0);
  const Tensor S0 = random_normal({3, 40}, 1.0, rng);
  const Tensor X = matmul(B0, S0);
  AlternatingOptions opts;
  opts.outer_iters = 200;
  opts.seed = 4;
  const auto exact = alternating_sparse_coding(X, 3, 0.0, opts);
  CHECK(exact.objective_trace.back() <= 1e-6 * X.squared_norm());
  for (std::size_t j = 0; j < 3; ++j) CHECK(exact.B.col(j).norm() == doctest::Approx(1.0).epsilon(1e-12));
  for (std::size_t i = 1; i < exact.objective_trace.size(); ++i)
    CHECK(exact.objective_trace[i] <= exact.objective_trace[i - 1] * (1 + 1e-12));

  opts.outer_iters = 5;
  const auto dead = alternating_sparse_coding(X, 3, 1e6, opts);
  CHECK(dead.S == Tensor(Shape{3, 40}, 0.0));
}
