#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "spred/autodiff.hpp"
#include "spred/tensor.hpp"

namespace spred {

// Fully connected network acting on rows: h_{l+1} = act_l(h_l W_l + b_l), with
// W_l stored [in x out]. The last activation is normally identity (logits).
struct MlpSpec {
  std::vector<std::size_t> widths;       // input, hidden..., output
  std::vector<Activation> activations;   // one per layer
  std::vector<bool> bias;                // one per layer

  static MlpSpec make(std::vector<std::size_t> widths, Activation hidden, bool with_bias);
  std::size_t layers() const { return widths.empty() ? 0 : widths.size() - 1; }
  void validate() const;
};

std::string weight_name(std::size_t layer);  // "W1", "W2", ...
std::string bias_name(std::size_t layer);    // "b1", "b2", ...

// Weights N(0, 1/fan_in), zero biases.
std::map<std::string, Tensor> init_mlp(const MlpSpec& spec, std::uint64_t seed);

// `weights` supplies every "W<l>" (and "b<l>" where the layer has a bias).
Var mlp_forward(const MlpSpec& spec, const Var& x, const std::map<std::string, Var>& weights);
Tensor mlp_predict(const MlpSpec& spec, const Tensor& x, const std::map<std::string, Tensor>& weights);

std::vector<std::size_t> argmax_rows(const Tensor& logits);
double accuracy(const Tensor& logits, const std::vector<std::size_t>& labels);

std::size_t weight_count(const std::map<std::string, Tensor>& weights);

}  // namespace spred
