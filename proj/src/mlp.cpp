#include "spred/mlp.hpp"

#include <cmath>
#include <stdexcept>

#include "spred/random.hpp"

namespace spred {

MlpSpec MlpSpec::make(std::vector<std::size_t> widths, Activation hidden, bool with_bias) {
  MlpSpec s;
  s.widths = std::move(widths);
  const std::size_t layers = s.widths.empty() ? 0 : s.widths.size() - 1;
  for (std::size_t l = 0; l < layers; ++l) {
    s.activations.push_back(l + 1 == layers ? Activation::identity : hidden);
    s.bias.push_back(with_bias);
  }
  s.validate();
  return s;
}

void MlpSpec::validate() const {
  if (widths.size() < 2) throw std::invalid_argument("MLP needs at least an input and an output width");
  for (auto w : widths) {
    if (w == 0) throw std::invalid_argument("MLP widths must be positive");
  }
  if (activations.size() != layers() || bias.size() != layers()) {
    throw std::invalid_argument("MLP needs one activation and one bias flag per layer");
  }
}

std::string weight_name(std::size_t layer) { return "W" + std::to_string(layer + 1); }
std::string bias_name(std::size_t layer) { return "b" + std::to_string(layer + 1); }

std::map<std::string, Tensor> init_mlp(const MlpSpec& spec, std::uint64_t seed) {
  spec.validate();
  Rng rng(seed);
  std::map<std::string, Tensor> out;
  for (std::size_t l = 0; l < spec.layers(); ++l) {
    const std::size_t in = spec.widths[l], o = spec.widths[l + 1];
    out.emplace(weight_name(l), random_normal({in, o}, 1.0 / std::sqrt(static_cast<double>(in)), rng));
    if (spec.bias[l]) out.emplace(bias_name(l), Tensor(Shape{o}, 0.0));
  }
  return out;
}

Var mlp_forward(const MlpSpec& spec, const Var& x, const std::map<std::string, Var>& weights) {
  Var h = x;
  for (std::size_t l = 0; l < spec.layers(); ++l) {
    h = matmul(h, weights.at(weight_name(l)));
    if (spec.bias[l]) h = add_bias(h, weights.at(bias_name(l)));
    if (spec.activations[l] != Activation::identity) h = activation(h, spec.activations[l]);
  }
  return h;
}

Tensor mlp_predict(const MlpSpec& spec, const Tensor& x, const std::map<std::string, Tensor>& weights) {
  Tensor h = x;
  for (std::size_t l = 0; l < spec.layers(); ++l) {
    h = matmul(h, weights.at(weight_name(l)));
    if (spec.bias[l]) {
      const Tensor& b = weights.at(bias_name(l));
      for (std::size_t i = 0; i < h.rows(); ++i)
        for (std::size_t j = 0; j < h.cols(); ++j) h(i, j) += b[j];
    }
    h = apply_activation(h, spec.activations[l]);
  }
  return h;
}

std::vector<std::size_t> argmax_rows(const Tensor& logits) {
  std::vector<std::size_t> out(logits.rows(), 0);
  for (std::size_t i = 0; i < logits.rows(); ++i)
    for (std::size_t j = 1; j < logits.cols(); ++j) {
      if (logits(i, j) > logits(i, out[i])) out[i] = j;
    }
  return out;
}

double accuracy(const Tensor& logits, const std::vector<std::size_t>& labels) {
  if (logits.rows() != labels.size()) throw ShapeError("accuracy: logits and labels disagree in length");
  const auto pred = argmax_rows(logits);
  std::size_t hit = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) hit += pred[i] == labels[i];
  return static_cast<double>(hit) / static_cast<double>(labels.size());
}

std::size_t weight_count(const std::map<std::string, Tensor>& weights) {
  std::size_t n = 0;
  for (const auto& [name, t] : weights) n += t.size();
  return n;
}

}  // namespace spred
