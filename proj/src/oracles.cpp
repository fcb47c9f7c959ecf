#include "spred/oracles.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "spred/linalg.hpp"
#include "spred/random.hpp"

namespace spred::oracles {

namespace {

double sign(double x) { return x > 0 ? 1.0 : (x < 0 ? -1.0 : 0.0); }

// 2 X^T (X w - y)
Tensor smooth_gradient(const Tensor& X, const Tensor& y, const Tensor& w) {
  Tensor r = matmul(X, w);
  r -= y;
  Tensor g = matmul_tn(X, r);
  g *= 2.0;
  return g;
}

Tensor column_of(const Tensor& y, std::size_t j) { return y.rank() == 1 ? y : y.col(j); }

LassoProblem single_output(const LassoProblem& p, std::size_t j) {
  return LassoProblem{p.X, column_of(p.y, j), p.kappa};
}

template <class Solve>
OracleResult columnwise(const LassoProblem& p, Solve&& solve) {
  if (p.y.rank() == 1) return solve(p);
  const std::size_t d = p.features(), m = p.outputs();
  OracleResult out;
  out.w = Tensor(Shape{d, m});
  out.converged = true;
  for (std::size_t j = 0; j < m; ++j) {
    OracleResult r = solve(single_output(p, j));
    out.w.set_col(j, r.w);
    out.iterations = std::max(out.iterations, r.iterations);
    out.converged = out.converged && r.converged;
  }
  return out;
}

}  // namespace

NonOrthonormalDesign::NonOrthonormalDesign(double d)
    : std::invalid_argument("design is not orthonormal: max |X^T X - I| = " + std::to_string(d)), defect(d) {}

void LassoProblem::validate() const {
  if (X.rank() != 2) throw ShapeError("lasso design must be a matrix, got " + shape_to_string(X.shape()));
  if (y.rank() != 1 && y.rank() != 2) throw ShapeError("lasso targets must be rank 1 or 2");
  if (y.rows() != X.rows()) {
    throw ShapeError("lasso targets " + shape_to_string(y.shape()) + " do not match design " +
                     shape_to_string(X.shape()));
  }
  if (!(kappa >= 0)) throw std::invalid_argument("lasso kappa must be nonnegative");
}

void GroupLassoProblem::validate() const {
  lasso.validate();
  if (lasso.y.rank() != 1) throw ShapeError("group lasso supports a single output");
  std::vector<int> seen(lasso.features(), 0);
  for (const auto& g : groups) {
    if (g.empty()) throw std::invalid_argument("empty group");
    for (auto i : g) {
      if (i >= seen.size()) throw std::invalid_argument("group index out of range");
      ++seen[i];
    }
  }
  if (std::any_of(seen.begin(), seen.end(), [](int c) { return c != 1; })) {
    throw std::invalid_argument("groups must partition the coordinates");
  }
}

double soft_threshold(double c, double kappa) { return sign(c) * std::max(std::abs(c) - kappa, 0.0); }

Tensor soft_threshold(const Tensor& c, double kappa) {
  Tensor out = c;
  for (auto& v : out.data()) v = soft_threshold(v, kappa);
  return out;
}

Tensor group_soft_threshold(const Tensor& v, double kappa) {
  const double n = v.norm();
  if (n <= kappa) return Tensor(v.shape(), 0.0);
  return v * (1.0 - kappa / n);
}

double lasso_objective(const LassoProblem& p, const Tensor& w) {
  Tensor r = matmul(p.X, w);
  r -= p.y;
  return r.squared_norm() + 2.0 * p.kappa * w.l1_norm();
}

double group_lasso_objective(const GroupLassoProblem& p, const Tensor& w) {
  Tensor r = matmul(p.lasso.X, w);
  r -= p.lasso.y;
  double pen = 0.0;
  for (const auto& g : p.groups) {
    double s = 0.0;
    for (auto i : g) s += w[i] * w[i];
    pen += std::sqrt(s);
  }
  return r.squared_norm() + 2.0 * p.lasso.kappa * pen;
}

double lasso_kkt_residual(const LassoProblem& p, const Tensor& w) {
  const Tensor g = smooth_gradient(p.X, p.y, w);
  const double k2 = 2.0 * p.kappa;
  double worst = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    const double viol = w[i] != 0.0 ? std::abs(g[i] + k2 * sign(w[i])) : std::max(0.0, std::abs(g[i]) - k2);
    worst = std::max(worst, viol);
  }
  return worst;
}

double group_lasso_kkt_residual(const GroupLassoProblem& p, const Tensor& w) {
  const Tensor g = smooth_gradient(p.lasso.X, p.lasso.y, w);
  const double k2 = 2.0 * p.lasso.kappa;
  double worst = 0.0;
  for (const auto& grp : p.groups) {
    double wn = 0.0, gn = 0.0;
    for (auto i : grp) {
      wn += w[i] * w[i];
      gn += g[i] * g[i];
    }
    wn = std::sqrt(wn);
    if (wn == 0.0) {
      worst = std::max(worst, std::sqrt(gn) - k2);
    } else {
      double r = 0.0;
      for (auto i : grp) {
        const double c = g[i] + k2 * w[i] / wn;
        r += c * c;
      }
      worst = std::max(worst, std::sqrt(r));
    }
  }
  return std::max(worst, 0.0);
}

Tensor closed_form_lasso_orthonormal(const LassoProblem& p) {
  p.validate();
  const double defect = linalg::orthonormality_defect(p.X);
  if (defect > 1e-8) throw NonOrthonormalDesign(defect);
  return soft_threshold(matmul_tn(p.X, p.y), p.kappa);
}

namespace {

OracleResult cd_single(const LassoProblem& p, double tol, std::size_t max_sweeps, const IterationHook& hook) {
  const std::size_t n = p.samples(), d = p.features();
  // Contiguous columns: row j of Xt is column j of X.
  const Tensor Xt = p.X.transposed();
  std::vector<double> col_sq(d);
  for (std::size_t j = 0; j < d; ++j) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += Xt(j, i) * Xt(j, i);
    col_sq[j] = s;
  }
  OracleResult out;
  out.w = Tensor(Shape{d}, 0.0);
  Tensor r = p.y;
  double crit = tol;
  for (int refine = 0; refine < 6; ++refine) {
    bool done = false;
    while (out.iterations < max_sweeps) {
      ++out.iterations;
      double max_change = 0.0;
      for (std::size_t j = 0; j < d; ++j) {
        if (col_sq[j] == 0.0) continue;
        const double* xj = Xt.data().data() + j * n;
        const double old = out.w[j];
        double rho = 0.0;
        for (std::size_t i = 0; i < n; ++i) rho += xj[i] * r[i];
        rho += col_sq[j] * old;
        const double nw = soft_threshold(rho, p.kappa) / col_sq[j];
        const double delta = nw - old;
        if (delta != 0.0) {
          for (std::size_t i = 0; i < n; ++i) r[i] -= xj[i] * delta;
          out.w[j] = nw;
          max_change = std::max(max_change, std::abs(delta));
        }
      }
      if (hook) hook(out.iterations, out.w);
      if (max_change < crit) {
        done = true;
        break;
      }
    }
    if (!done) break;
    if (lasso_kkt_residual(p, out.w) <= 10.0 * tol) {
      out.converged = true;
      break;
    }
    crit *= 0.1;
  }
  return out;
}

OracleResult prox_single(const LassoProblem& p, ProxVariant variant, double tol, std::size_t max_iter,
                         const Tensor* start, const IterationHook& hook) {
  const std::size_t d = p.features();
  const double lipschitz = 2.0 * gram_spectral_norm(p.X) * 1.01;
  OracleResult out;
  out.w = start ? *start : Tensor(Shape{d}, 0.0);
  if (lipschitz == 0.0) {
    out.w = Tensor(Shape{d}, 0.0);
    out.converged = true;
    return out;
  }
  const double step = 1.0 / lipschitz;
  Tensor yk = out.w;  // extrapolated point (FISTA)
  double tk = 1.0;
  double f_prev = lasso_objective(p, out.w);
  for (std::size_t it = 0; it < max_iter; ++it) {
    out.iterations = it + 1;
    const Tensor& base = variant == ProxVariant::fista ? yk : out.w;
    Tensor g = smooth_gradient(p.X, p.y, base);
    Tensor next = base;
    next.axpy(-step, g);
    next = soft_threshold(next, 2.0 * p.kappa * step);
    double f = lasso_objective(p, next);
    if (variant == ProxVariant::fista) {
      if (f > f_prev) {
        // Function-value restart: take a plain proximal step from the current iterate.
        tk = 1.0;
        g = smooth_gradient(p.X, p.y, out.w);
        next = out.w;
        next.axpy(-step, g);
        next = soft_threshold(next, 2.0 * p.kappa * step);
        f = lasso_objective(p, next);
        yk = next;
      } else {
        const double t_next = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * tk * tk));
        yk = next;
        Tensor diff = next - out.w;
        yk.axpy((tk - 1.0) / t_next, diff);
        tk = t_next;
      }
    }
    const double change = std::abs(f_prev - f);
    out.w = std::move(next);
    if (hook) hook(out.iterations, out.w);
    if (change <= tol * std::max(1.0, std::abs(f))) {
      out.converged = true;
      break;
    }
    f_prev = f;
  }
  return out;
}

}  // namespace

OracleResult coordinate_descent_lasso(const LassoProblem& p, double tol, std::size_t max_sweeps,
                                      const IterationHook& hook) {
  p.validate();
  if (!(tol > 0)) throw std::invalid_argument("coordinate descent tolerance must be positive");
  return columnwise(p, [&](const LassoProblem& q) { return cd_single(q, tol, max_sweeps, hook); });
}

double gram_spectral_norm(const Tensor& X, std::size_t iters, double tol) {
  const std::size_t d = X.cols();
  Tensor v(Shape{d}, 1.0 / std::sqrt(static_cast<double>(d)));
  // Deterministic, generic start vector.
  for (std::size_t i = 0; i < d; ++i) v[i] *= 1.0 + 0.01 * static_cast<double>(i % 7);
  v *= 1.0 / v.norm();
  double lambda = 0.0;
  for (std::size_t it = 0; it < iters; ++it) {
    Tensor w = matmul_tn(X, matmul(X, v));
    const double nrm = w.norm();
    if (nrm == 0.0) return 0.0;
    const double next = dot(v, w);
    v = w * (1.0 / nrm);
    if (std::abs(next - lambda) <= tol * std::abs(next)) return next;
    lambda = next;
  }
  return lambda;
}

OracleResult ista_fista_lasso(const LassoProblem& p, ProxVariant variant, double tol, std::size_t max_iter,
                              const Tensor* start, const IterationHook& hook) {
  p.validate();
  if (p.y.rank() != 1 && start) throw std::invalid_argument("warm start supports a single output");
  return columnwise(p, [&](const LassoProblem& q) { return prox_single(q, variant, tol, max_iter, start, hook); });
}

Tensor ista_step(const LassoProblem& p, const Tensor& w, double step) {
  p.validate();
  Tensor next = w;
  next.axpy(-step, smooth_gradient(p.X, p.y, w));
  return soft_threshold(next, 2.0 * p.kappa * step);
}

OracleResult group_lasso_prox(const GroupLassoProblem& p, double tol, std::size_t max_iter) {
  p.validate();
  const auto& X = p.lasso.X;
  const auto& y = p.lasso.y;
  const std::size_t d = p.lasso.features();
  const double lipschitz = 2.0 * gram_spectral_norm(X) * 1.01;
  OracleResult out;
  out.w = Tensor(Shape{d}, 0.0);
  if (lipschitz == 0.0) {
    out.converged = true;
    return out;
  }
  const double step = 1.0 / lipschitz;
  auto prox_step = [&](const Tensor& from) {
    Tensor next = from;
    next.axpy(-step, smooth_gradient(X, y, from));
    for (const auto& grp : p.groups) {
      Tensor block(Shape{grp.size()});
      for (std::size_t k = 0; k < grp.size(); ++k) block[k] = next[grp[k]];
      block = group_soft_threshold(block, 2.0 * p.lasso.kappa * step);
      for (std::size_t k = 0; k < grp.size(); ++k) next[grp[k]] = block[k];
    }
    return next;
  };
  Tensor yk = out.w;
  double tk = 1.0;
  double f_prev = group_lasso_objective(p, out.w);
  for (std::size_t it = 0; it < max_iter; ++it) {
    out.iterations = it + 1;
    Tensor next = prox_step(yk);
    double f = group_lasso_objective(p, next);
    if (f > f_prev) {
      tk = 1.0;
      next = prox_step(out.w);
      f = group_lasso_objective(p, next);
      yk = next;
    } else {
      const double t_next = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * tk * tk));
      yk = next;
      Tensor diff = next - out.w;
      yk.axpy((tk - 1.0) / t_next, diff);
      tk = t_next;
    }
    const double change = std::abs(f_prev - f);
    out.w = std::move(next);
    if (change <= tol * std::max(1.0, std::abs(f))) {
      out.converged = true;
      break;
    }
    f_prev = f;
  }
  return out;
}

double sparse_coding_objective(const Tensor& X, const Tensor& B, const Tensor& S, double kappa) {
  Tensor r = matmul(B, S);
  r -= X;
  return r.squared_norm() + 2.0 * kappa * S.l1_norm();
}

void normalize_columns(Tensor& B) {
  const std::size_t m = B.rows(), k = B.cols();
  for (std::size_t j = 0; j < k; ++j) {
    double s = 0.0;
    for (std::size_t i = 0; i < m; ++i) s += B(i, j) * B(i, j);
    s = std::sqrt(s);
    if (s == 0.0) {
      B(0, j) = 1.0;
      continue;
    }
    for (std::size_t i = 0; i < m; ++i) B(i, j) /= s;
  }
}

namespace {

// Monotone FISTA on all code columns at once (the problem separates by column).
void solve_codes(const Tensor& X, const Tensor& B, Tensor& S, double kappa, std::size_t iters) {
  const Tensor gram = matmul_tn(B, B);
  const Tensor btx = matmul_tn(B, X);
  const double lipschitz = 2.0 * gram_spectral_norm(B) * 1.01;
  if (lipschitz == 0.0) return;
  const double step = 1.0 / lipschitz;
  auto objective = [&](const Tensor& s) { return sparse_coding_objective(X, B, s, kappa); };
  auto prox = [&](const Tensor& from) {
    // grad = 2 (B^T B S - B^T X)
    Tensor g = matmul(gram, from);
    g -= btx;
    Tensor next = from;
    next.axpy(-2.0 * step, g);
    return soft_threshold(next, 2.0 * kappa * step);
  };
  double f_prev = objective(S);
  Tensor yk = S;
  double tk = 1.0;
  for (std::size_t it = 0; it < iters; ++it) {
    Tensor next = prox(yk);
    double f = objective(next);
    if (f > f_prev) {
      tk = 1.0;
      next = prox(S);
      f = objective(next);
      if (f > f_prev) break;
      yk = next;
    } else {
      const double t_next = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * tk * tk));
      yk = next;
      Tensor diff = next - S;
      yk.axpy((tk - 1.0) / t_next, diff);
      tk = t_next;
    }
    S = std::move(next);
    if (f_prev - f <= 1e-14 * std::max(1.0, f)) break;
    f_prev = f;
  }
}

// Projected gradient on the unit-column sphere; a step is kept only if it lowers the objective.
void update_dictionary(const Tensor& X, Tensor& B, const Tensor& S, double kappa, std::size_t iters) {
  const Tensor sst = matmul_nt(S, S);
  const double lipschitz = 2.0 * gram_spectral_norm(S.transposed());
  if (lipschitz == 0.0) return;
  double f = sparse_coding_objective(X, B, S, kappa);
  for (std::size_t it = 0; it < iters; ++it) {
    // grad = 2 (B S S^T - X S^T)
    Tensor g = matmul(B, sst);
    g -= matmul_nt(X, S);
    g *= 2.0;
    double t = 1.0 / lipschitz;
    bool moved = false;
    for (int bt = 0; bt < 20; ++bt) {
      Tensor cand = B;
      cand.axpy(-t, g);
      normalize_columns(cand);
      const double fc = sparse_coding_objective(X, cand, S, kappa);
      if (fc < f) {
        B = std::move(cand);
        f = fc;
        moved = true;
        break;
      }
      t *= 0.5;
    }
    if (!moved) break;
  }
}

}  // namespace

SparseCodingResult alternating_sparse_coding(const Tensor& X, std::size_t k, double kappa,
                                             const AlternatingOptions& options) {
  if (k < 1) throw std::invalid_argument("dictionary size must be at least 1");
  if (X.rank() != 2) throw ShapeError("sparse coding data must be a matrix");
  const std::size_t d0 = X.rows(), n = X.cols();
  SparseCodingResult out;
  if (options.initial_dictionary) {
    out.B = *options.initial_dictionary;
    if (out.B.shape() != Shape{d0, k}) throw ShapeError("initial dictionary has the wrong shape");
  } else {
    Rng rng(options.seed);
    out.B = random_normal({d0, k}, 1.0, rng);
  }
  normalize_columns(out.B);
  out.S = Tensor(Shape{k, n}, 0.0);
  out.objective_trace.push_back(sparse_coding_objective(X, out.B, out.S, kappa));
  out.hit_iteration_cap = true;
  for (std::size_t it = 0; it < options.outer_iters; ++it) {
    out.iterations = it + 1;
    solve_codes(X, out.B, out.S, kappa, options.code_iters);
    update_dictionary(X, out.B, out.S, kappa, options.dictionary_iters);
    const double f = sparse_coding_objective(X, out.B, out.S, kappa);
    const double prev = out.objective_trace.back();
    out.objective_trace.push_back(f);
    if (prev - f <= options.tol * std::max(1.0, f)) {
      out.hit_iteration_cap = false;
      break;
    }
  }
  return out;
}

}  // namespace spred::oracles
