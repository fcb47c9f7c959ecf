#include "spred/spred.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "spred/random.hpp"

namespace spred {

namespace {

double sign(double x) { return x > 0 ? 1.0 : (x < 0 ? -1.0 : 0.0); }

bool symmetric(const SpredParam& p) { return p.alpha == p.beta; }

}  // namespace

SpredMode parse_mode(std::string_view name) {
  if (name == "elementwise") return SpredMode::elementwise;
  if (name == "group") return SpredMode::group;
  throw std::invalid_argument("unknown spred mode '" + std::string(name) + "'");
}

InitScheme parse_init(std::string_view name) {
  if (name == "sqrt-standard") return InitScheme::sqrt_standard;
  if (name == "factor-unit") return InitScheme::factor_unit;
  throw std::invalid_argument("unknown init scheme '" + std::string(name) + "'");
}

std::string_view to_string(SpredMode mode) { return mode == SpredMode::group ? "group" : "elementwise"; }
std::string_view to_string(InitScheme init) {
  return init == InitScheme::factor_unit ? "factor-unit" : "sqrt-standard";
}

void SpredParam::validate() const {
  if (kappa < 0 || alpha < 0 || beta < 0) throw std::invalid_argument("spred penalty weights must be nonnegative");
  const double k2 = kappa * kappa;
  if (std::abs(alpha * beta - k2) > 1e-12 * std::max(k2, alpha * beta)) {
    throw std::invalid_argument("spred split violates alpha*beta = kappa^2");
  }
  if (mode == SpredMode::elementwise && U.shape() != W.shape()) {
    throw ShapeError("elementwise spred factors differ in shape: " + shape_to_string(U.shape()) + " vs " +
                     shape_to_string(W.shape()));
  }
  if (mode == SpredMode::group && U.size() != 1) {
    throw ShapeError("group spred scale must hold one entry, got " + shape_to_string(U.shape()));
  }
}

SpredParam make_spred_param(const Shape& shape, double kappa, SpredMode mode, InitScheme init, std::uint64_t seed,
                            std::optional<std::size_t> fan_in) {
  if (!(kappa >= 0)) throw std::invalid_argument("kappa must be nonnegative");
  if (shape.empty()) throw ShapeError("spred parameter needs a nonempty shape");
  for (auto e : shape) {
    if (e == 0) throw ShapeError("spred parameter extents must be positive, got " + shape_to_string(shape));
  }
  const std::size_t fan = fan_in.value_or(shape.size() >= 2 ? shape[1] : shape[0]);
  // Standard deviation of the product under the usual 1/sqrt(fan_in) scaling.
  const double target = 1.0 / std::sqrt(static_cast<double>(std::max<std::size_t>(fan, 1)));

  Rng rng(seed);
  SpredParam p;
  p.mode = mode;
  p.kappa = p.alpha = p.beta = kappa;
  if (mode == SpredMode::elementwise) {
    if (init == InitScheme::sqrt_standard) {
      const double s = std::sqrt(target);
      p.U = random_normal(shape, s, rng);
      p.W = random_normal(shape, s, rng);
    } else {
      p.U = random_normal(shape, 1.0, rng);
      p.W = random_normal(shape, target, rng);
    }
  } else {
    const double n = static_cast<double>(shape_numel(shape));
    if (init == InitScheme::sqrt_standard) {
      // |u| ~ ||W|| in expectation, product entries with standard deviation `target`.
      const double s = std::sqrt(target / std::sqrt(n));
      p.W = random_normal(shape, s, rng);
      p.U = Tensor::scalar(std::sqrt(n) * s);
    } else {
      p.W = random_normal(shape, target, rng);
      p.U = Tensor::scalar(1.0);
    }
  }
  return p;
}

SpredParam spred_param_from_factors(Tensor U, Tensor W, double kappa, SpredMode mode) {
  SpredParam p;
  p.mode = mode;
  p.U = std::move(U);
  p.W = std::move(W);
  p.kappa = p.alpha = p.beta = kappa;
  p.validate();
  return p;
}

Tensor effective_value(const SpredParam& p) {
  if (p.mode == SpredMode::group) return p.W * p.u();
  return hadamard(p.U, p.W);
}

double penalty(const SpredParam& p) { return p.alpha * p.U.squared_norm() + p.beta * p.W.squared_norm(); }

double sparse_penalty(const Tensor& V, double kappa, SpredMode mode) {
  return 2.0 * kappa * (mode == SpredMode::group ? V.norm() : V.l1_norm());
}

SpredParam rebalance(const SpredParam& p) {
  SpredParam out = p;
  // Balanced means sqrt(alpha)|U| = sqrt(beta)|W|; with alpha = beta this is |U| = |W|.
  const double su = symmetric(p) ? 1.0 : std::pow(p.beta / p.alpha, 0.25);
  const double sw = symmetric(p) ? 1.0 : std::pow(p.alpha / p.beta, 0.25);
  if (p.mode == SpredMode::elementwise) {
    for (std::size_t i = 0; i < p.U.size(); ++i) {
      const double root = std::sqrt(std::abs(p.U[i] * p.W[i]));
      out.U[i] = sign(p.U[i]) * su * root;
      out.W[i] = sign(p.W[i]) * sw * root;
    }
  } else {
    const double u = std::abs(p.u());
    const double w = p.W.norm();
    if (u == 0.0 || w == 0.0) {
      out.U.fill(0.0);
      out.W.fill(0.0);
    } else {
      // |u c| = ||W|| / c at c = sqrt(||W|| / |u|).
      const double c = std::sqrt(w / u);
      out.U[0] = p.u() * c * su;
      out.W = p.W * (sw / c);
    }
  }
  return out;
}

double balance_gap(const SpredParam& p) {
  const double ku = symmetric(p) ? 1.0 : std::sqrt(p.alpha / p.kappa);
  const double kw = symmetric(p) ? 1.0 : std::sqrt(p.beta / p.kappa);
  if (p.mode == SpredMode::group) return std::abs(ku * std::abs(p.u()) - kw * p.W.norm());
  double gap = 0.0;
  for (std::size_t i = 0; i < p.U.size(); ++i) {
    gap = std::max(gap, std::abs(ku * std::abs(p.U[i]) - kw * std::abs(p.W[i])));
  }
  return gap;
}

SpredParam rescale_to_split(const SpredParam& p, double alpha, double beta) {
  if (!(alpha > 0 && beta > 0)) throw std::invalid_argument("split weights must be positive");
  SpredParam out = p;
  out.alpha = alpha;
  out.beta = beta;
  out.kappa = std::sqrt(alpha * beta);
  out.U = p.U * std::pow(beta / alpha, 0.25);
  out.W = p.W * std::pow(alpha / beta, 0.25);
  return out;
}

std::string factor_u_name(const std::string& sparse_name) { return sparse_name + ".U"; }
std::string factor_w_name(const std::string& sparse_name) { return sparse_name + ".W"; }

ParamSet parameters(const SpredModel& m) {
  ParamSet out;
  for (const auto& [name, p] : m.sparse) {
    out.emplace(factor_u_name(name), p.U);
    out.emplace(factor_w_name(name), p.W);
  }
  for (const auto& [name, t] : m.dense) out.emplace(name, t);
  return out;
}

void assign(SpredModel& m, const ParamSet& params) {
  for (auto& [name, p] : m.sparse) {
    p.U = params.at(factor_u_name(name));
    p.W = params.at(factor_w_name(name));
  }
  for (auto& [name, t] : m.dense) t = params.at(name);
}

std::map<std::string, Tensor> effective_values(const SpredModel& m) {
  std::map<std::string, Tensor> out;
  for (const auto& [name, p] : m.sparse) out.emplace(name, effective_value(p));
  return out;
}

Var spred_objective(const SpredModel& m, Graph& g) {
  ValueMap values;
  std::vector<Var> penalties;
  for (const auto& [name, p] : m.sparse) {
    Var u = g.parameter(factor_u_name(name), p.U);
    Var w = g.parameter(factor_w_name(name), p.W);
    values.emplace(name, p.mode == SpredMode::group ? scalar_mul(u, w) : hadamard(u, w));
    penalties.push_back(scale(squared_norm(u), p.alpha));
    penalties.push_back(scale(squared_norm(w), p.beta));
  }
  for (const auto& [name, t] : m.dense) {
    Var v = g.parameter(name, t);
    values.emplace(name, v);
    if (m.dense_decay != 0.0) penalties.push_back(scale(squared_norm(v), m.dense_decay));
  }
  Var loss = m.base_loss(g, values);
  for (const auto& term : penalties) loss = loss + term;
  return loss;
}

Evaluation evaluate(const SpredModel& m) {
  Graph g;
  Var loss = spred_objective(m, g);
  return {loss.value().item(), g.backward(loss)};
}

double base_loss_value(const SpredModel& m, const std::map<std::string, Tensor>& V) {
  Graph g;
  ValueMap values;
  for (const auto& [name, p] : m.sparse) values.emplace(name, g.constant(V.at(name)));
  for (const auto& [name, t] : m.dense) values.emplace(name, g.constant(t));
  return m.base_loss(g, values).value().item();
}

double l1_objective(const SpredModel& m, const std::map<std::string, Tensor>& V) {
  double total = base_loss_value(m, V);
  for (const auto& [name, p] : m.sparse) total += sparse_penalty(V.at(name), p.kappa, p.mode);
  for (const auto& [name, t] : m.dense) total += m.dense_decay * t.squared_norm();
  return total;
}

void SparsifyPolicy::validate() const {
  if (!(tight >= 0 && loose >= tight)) throw std::invalid_argument("thresholds must satisfy loose >= tight >= 0");
  if (!(reference >= 0)) throw std::invalid_argument("threshold reference must be nonnegative");
}

Tensor zero_below(const Tensor& V, double threshold, ThresholdMeasure measure, double reference) {
  const double cut =
      measure == ThresholdMeasure::relative_to_max ? threshold * std::max(V.abs_max(), reference) : threshold;
  Tensor out = V;
  for (auto& v : out.data()) {
    if (std::abs(v) < cut) v = 0.0;
  }
  return out;
}

double zero_fraction(const Tensor& V) {
  if (V.empty()) return 0.0;
  const auto zeros = std::count(V.values().begin(), V.values().end(), 0.0);
  return static_cast<double>(zeros) / static_cast<double>(V.size());
}

SparsifyResult threshold_sparsify(const Tensor& V, const SparsifyPolicy& policy) {
  policy.validate();
  SparsifyResult r;
  r.loose = zero_below(V, policy.loose, policy.measure, policy.reference);
  r.tight = zero_below(V, policy.tight, policy.measure, policy.reference);
  r.sparsity_loose = zero_fraction(r.loose);
  r.sparsity_tight = zero_fraction(r.tight);
  return r;
}

std::pair<double, double> joint_sparsity(const std::vector<const Tensor*>& tensors, const SparsifyPolicy& policy) {
  double mx = policy.reference;
  std::size_t total = 0;
  for (const auto* t : tensors) {
    mx = std::max(mx, t->abs_max());
    total += t->size();
  }
  const double scale = policy.measure == ThresholdMeasure::relative_to_max ? mx : 1.0;
  const double loose_cut = policy.loose * scale, tight_cut = policy.tight * scale;
  std::size_t loose = 0, tight = 0;
  for (const auto* t : tensors) {
    for (double v : t->data()) {
      const double a = std::abs(v);
      if (a < loose_cut || a == 0.0) ++loose;
      if (a < tight_cut || a == 0.0) ++tight;
    }
  }
  if (total == 0) return {0.0, 0.0};
  return {static_cast<double>(loose) / static_cast<double>(total), static_cast<double>(tight) / static_cast<double>(total)};
}

bool converged_by_two_thresholds(std::span<const std::pair<double, double>> history, std::size_t window) {
  if (history.empty()) throw std::invalid_argument("two-threshold criterion needs a nonempty history");
  window = std::max<std::size_t>(window, 1);
  if (history.size() < window) return false;
  const auto& last = history.back();
  if (last.first != last.second) return false;
  for (std::size_t i = history.size() - window; i < history.size(); ++i) {
    if (history[i] != last) return false;
  }
  return true;
}

std::optional<std::size_t> merge_index(std::span<const std::pair<double, double>> history) {
  if (history.empty()) return std::nullopt;
  const auto& last = history.back();
  if (last.first != last.second) return std::nullopt;
  std::size_t i = history.size() - 1;
  while (i > 0 && history[i - 1] == last) --i;
  return i;
}

}  // namespace spred
