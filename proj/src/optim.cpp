#include "spred/optim.hpp"

#include <cmath>
#include <numeric>
#include <stdexcept>

#include <json.hpp>

namespace spred {

namespace {

using nlohmann::json;

double dotv(const std::vector<double>& a, const std::vector<double>& b) {
  return std::inner_product(a.begin(), a.end(), b.begin(), 0.0);
}

double normv(const std::vector<double>& a) { return std::sqrt(dotv(a, a)); }

void check_grads(const ParamSet& params, const GradientMap& grads, const char* op) {
  for (const auto& [name, p] : params) {
    auto it = grads.find(name);
    if (it == grads.end()) throw std::invalid_argument(std::string(op) + ": no gradient for '" + name + "'");
    require_same_shape(p, it->second, op);
  }
}

Tensor& buffer_for(ParamSet& buffers, const std::string& name, const Tensor& like) {
  auto it = buffers.find(name);
  if (it == buffers.end()) it = buffers.emplace(name, Tensor(like.shape(), 0.0)).first;
  return it->second;
}

json tensor_json(const Tensor& t) { return json{{"shape", t.shape()}, {"data", t.values()}}; }

Tensor tensor_from_json(const json& j) {
  return Tensor(j.at("shape").get<Shape>(), j.at("data").get<std::vector<double>>());
}

json paramset_json(const ParamSet& ps) {
  json j = json::object();
  for (const auto& [k, v] : ps) j[k] = tensor_json(v);
  return j;
}

ParamSet paramset_from_json(const json& j) {
  ParamSet ps;
  for (const auto& [k, v] : j.items()) ps.emplace(k, tensor_from_json(v));
  return ps;
}

}  // namespace

OptimizerKind parse_optimizer(std::string_view name) {
  if (name == "sgd") return OptimizerKind::sgd;
  if (name == "adam") return OptimizerKind::adam;
  if (name == "lbfgs") return OptimizerKind::lbfgs;
  throw std::invalid_argument("unknown optimizer '" + std::string(name) + "'");
}

std::string_view to_string(OptimizerKind kind) {
  switch (kind) {
    case OptimizerKind::sgd: return "sgd";
    case OptimizerKind::adam: return "adam";
    case OptimizerKind::lbfgs: return "lbfgs";
  }
  return "sgd";
}

void OptimizerConfig::validate() const {
  if (!(lr > 0)) throw std::invalid_argument("step size must be positive");
  if (momentum < 0 || momentum >= 1) throw std::invalid_argument("momentum must lie in [0, 1)");
  if (!(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1)) throw std::invalid_argument("Adam betas must lie in [0, 1)");
  if (!(eps > 0)) throw std::invalid_argument("Adam epsilon must be positive");
  if (memory == 0) throw std::invalid_argument("L-BFGS memory must be positive");
  if (!(backtrack > 0 && backtrack < 1)) throw std::invalid_argument("backtracking factor must lie in (0, 1)");
}

void OptimizerState::reset_history() {
  history.clear();
  cached_point.clear();
  cached_grad.clear();
}

void sgd_step(ParamSet& params, const GradientMap& grads, OptimizerState& state) {
  check_grads(params, grads, "sgd_step");
  const auto& cfg = state.config;
  for (auto& [name, p] : params) {
    const Tensor& g = grads.at(name);
    if (cfg.momentum == 0.0) {
      p.axpy(-cfg.lr, g);
      continue;
    }
    Tensor& v = buffer_for(state.velocity, name, p);
    v *= cfg.momentum;
    v += g;
    p.axpy(-cfg.lr, v);
  }
  ++state.step;
}

void adam_step(ParamSet& params, const GradientMap& grads, OptimizerState& state) {
  check_grads(params, grads, "adam_step");
  const auto& cfg = state.config;
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(cfg.beta1, t);
  const double c2 = 1.0 - std::pow(cfg.beta2, t);
  for (auto& [name, p] : params) {
    const Tensor& g = grads.at(name);
    Tensor& m = buffer_for(state.first_moment, name, p);
    Tensor& v = buffer_for(state.second_moment, name, p);
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
      const double mhat = m[i] / c1;
      const double vhat = v[i] / c2;
      p[i] -= cfg.lr * (mhat / (std::sqrt(vhat) + cfg.eps) + cfg.decoupled_decay * p[i]);
    }
  }
}

void first_order_step(ParamSet& params, const GradientMap& grads, OptimizerState& state) {
  switch (state.config.kind) {
    case OptimizerKind::sgd: sgd_step(params, grads, state); return;
    case OptimizerKind::adam: adam_step(params, grads, state); return;
    case OptimizerKind::lbfgs: break;
  }
  throw std::invalid_argument("first_order_step: L-BFGS needs an objective closure");
}

std::vector<double> flatten(const ParamSet& params) {
  std::vector<double> out;
  for (const auto& [name, p] : params) out.insert(out.end(), p.values().begin(), p.values().end());
  return out;
}

void unflatten(ParamSet& params, const std::vector<double>& flat) {
  std::size_t offset = 0;
  for (auto& [name, p] : params) {
    for (std::size_t i = 0; i < p.size(); ++i) p[i] = flat.at(offset + i);
    offset += p.size();
  }
  if (offset != flat.size()) throw std::invalid_argument("unflatten: length mismatch");
}

std::vector<double> flatten(const GradientMap& grads, const ParamSet& layout) {
  std::vector<double> out;
  for (const auto& [name, p] : layout) {
    const Tensor& g = grads.at(name);
    require_same_shape(p, g, "flatten");
    out.insert(out.end(), g.values().begin(), g.values().end());
  }
  return out;
}

LbfgsStep lbfgs_step(ParamSet& params, const ObjectiveFn& objective, OptimizerState& state) {
  const auto& cfg = state.config;
  LbfgsStep result;
  std::vector<double> x = flatten(params);

  ParamSet trial = params;
  auto eval = [&](const std::vector<double>& point, std::vector<double>& grad) {
    unflatten(trial, point);
    GradientMap g;
    const double f = objective(trial, g);
    grad = flatten(g, trial);
    ++result.evaluations;
    return f;
  };

  double f;
  std::vector<double> g;
  if (state.cached_point == x && !state.cached_grad.empty()) {
    f = state.cached_value;
    g = state.cached_grad;
  } else {
    f = eval(x, g);
  }
  result.value_before = result.value_after = f;
  result.grad_norm = normv(g);
  ++state.step;
  if (!std::isfinite(f)) throw std::runtime_error("lbfgs_step: objective is not finite");
  if (result.grad_norm == 0.0) {
    result.stationary = true;
    state.cached_point = x;
    state.cached_grad = g;
    state.cached_value = f;
    return result;
  }

  // Two-loop recursion: d = -H g.
  const std::size_t n = x.size();
  std::vector<double> q = g;
  std::vector<double> alphas(state.history.size());
  for (std::size_t i = state.history.size(); i-- > 0;) {
    const auto& pair = state.history[i];
    const double rho = 1.0 / dotv(pair.y, pair.s);
    alphas[i] = rho * dotv(pair.s, q);
    for (std::size_t k = 0; k < n; ++k) q[k] -= alphas[i] * pair.y[k];
  }
  double gamma;
  if (!state.history.empty()) {
    const auto& last = state.history.back();
    gamma = dotv(last.s, last.y) / dotv(last.y, last.y);
  } else {
    gamma = std::min(1.0, 1.0 / result.grad_norm) * cfg.lr;
  }
  for (auto& v : q) v *= gamma;
  for (std::size_t i = 0; i < state.history.size(); ++i) {
    const auto& pair = state.history[i];
    const double rho = 1.0 / dotv(pair.y, pair.s);
    const double beta = rho * dotv(pair.y, q);
    for (std::size_t k = 0; k < n; ++k) q[k] += pair.s[k] * (alphas[i] - beta);
  }
  std::vector<double> d(n);
  for (std::size_t k = 0; k < n; ++k) d[k] = -q[k];
  double slope = dotv(g, d);
  if (!(slope < 0)) {
    state.history.clear();
    for (std::size_t k = 0; k < n; ++k) d[k] = -g[k] * std::min(1.0, 1.0 / result.grad_norm) * cfg.lr;
    slope = dotv(g, d);
  }

  auto line_search = [&](const std::vector<double>& dir, double dir_slope, std::vector<double>& x_new,
                         std::vector<double>& g_new, double& f_new) {
    double t = 1.0;
    x_new.resize(n);
    for (std::size_t it = 0; it <= cfg.max_backtracks; ++it) {
      for (std::size_t k = 0; k < n; ++k) x_new[k] = x[k] + t * dir[k];
      f_new = eval(x_new, g_new);
      if (std::isfinite(f_new) && f_new <= f + cfg.sufficient_decrease * t * dir_slope) return t;
      t *= cfg.backtrack;
    }
    return 0.0;
  };

  std::vector<double> x_new, g_new;
  double f_new = f;
  double t = line_search(d, slope, x_new, g_new, f_new);
  if (t == 0.0) {
    // Quasi-Newton direction failed: drop the curvature history and try steepest descent.
    result.fell_back = true;
    ++state.fallbacks;
    state.history.clear();
    std::vector<double> sd(n);
    for (std::size_t k = 0; k < n; ++k) sd[k] = -g[k] * cfg.lr / std::max(1.0, result.grad_norm);
    t = line_search(sd, dotv(g, sd), x_new, g_new, f_new);
    d = sd;
  }
  if (t == 0.0) {
    // No decrease found along either direction; stay put.
    result.stationary = true;
    state.cached_point = x;
    state.cached_grad = g;
    state.cached_value = f;
    return result;
  }

  CurvaturePair pair{std::vector<double>(n), std::vector<double>(n)};
  for (std::size_t k = 0; k < n; ++k) {
    pair.s[k] = x_new[k] - x[k];
    pair.y[k] = g_new[k] - g[k];
  }
  const double sy = dotv(pair.s, pair.y);
  if (sy > 1e-12 * normv(pair.s) * normv(pair.y)) {
    state.history.push_back(std::move(pair));
    while (state.history.size() > cfg.memory) state.history.pop_front();
  }
  unflatten(params, x_new);
  result.step_length = t;
  result.value_after = f_new;
  state.cached_point = std::move(x_new);
  state.cached_grad = std::move(g_new);
  state.cached_value = f_new;
  return result;
}

std::string serialize(const OptimizerState& state) {
  const auto& c = state.config;
  json cfg{{"kind", to_string(c.kind)},
           {"lr", c.lr},
           {"momentum", c.momentum},
           {"beta1", c.beta1},
           {"beta2", c.beta2},
           {"eps", c.eps},
           {"decoupled_decay", c.decoupled_decay},
           {"memory", c.memory},
           {"backtrack", c.backtrack},
           {"sufficient_decrease", c.sufficient_decrease},
           {"max_backtracks", c.max_backtracks}};
  json hist = json::array();
  for (const auto& p : state.history) hist.push_back(json{{"s", p.s}, {"y", p.y}});
  json j{{"config", cfg},
         {"step", state.step},
         {"velocity", paramset_json(state.velocity)},
         {"first_moment", paramset_json(state.first_moment)},
         {"second_moment", paramset_json(state.second_moment)},
         {"history", hist},
         {"cached_point", state.cached_point},
         {"cached_grad", state.cached_grad},
         {"cached_value", state.cached_value},
         {"fallbacks", state.fallbacks}};
  return j.dump();
}

OptimizerState deserialize_optimizer_state(std::string_view text) {
  const json j = json::parse(text);
  const json& c = j.at("config");
  OptimizerConfig cfg;
  cfg.kind = parse_optimizer(c.at("kind").get<std::string>());
  cfg.lr = c.at("lr");
  cfg.momentum = c.at("momentum");
  cfg.beta1 = c.at("beta1");
  cfg.beta2 = c.at("beta2");
  cfg.eps = c.at("eps");
  cfg.decoupled_decay = c.at("decoupled_decay");
  cfg.memory = c.at("memory");
  cfg.backtrack = c.at("backtrack");
  cfg.sufficient_decrease = c.at("sufficient_decrease");
  cfg.max_backtracks = c.at("max_backtracks");
  OptimizerState s(cfg);
  s.step = j.at("step");
  s.velocity = paramset_from_json(j.at("velocity"));
  s.first_moment = paramset_from_json(j.at("first_moment"));
  s.second_moment = paramset_from_json(j.at("second_moment"));
  for (const auto& p : j.at("history")) {
    s.history.push_back({p.at("s").get<std::vector<double>>(), p.at("y").get<std::vector<double>>()});
  }
  s.cached_point = j.at("cached_point").get<std::vector<double>>();
  s.cached_grad = j.at("cached_grad").get<std::vector<double>>();
  s.cached_value = j.at("cached_value");
  s.fallbacks = j.at("fallbacks");
  return s;
}

}  // namespace spred
