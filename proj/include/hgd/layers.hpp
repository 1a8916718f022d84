#pragma once

#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "hgd/ops.hpp"

namespace hgd {

/// Fan-in scaled uniform init: U(-gain * sqrt(3 / fan_in), +gain * sqrt(3 / fan_in)).
/// gain = sqrt(2) gives the Kaiming variance for ReLU layers.
template <typename T>
void fan_in_uniform(Tensor<T>& t, std::size_t fan_in, double gain, std::mt19937_64& rng) {
  const double bound = gain * std::sqrt(3.0 / static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (T& v : t.data()) v = static_cast<T>(dist(rng));
}

/// Weight (c_out, c_in) and bias (c_out) of a 1x1 convolution.
template <typename T>
struct Conv1x1 {
  Tensor<T> weight;
  Tensor<T> bias;

  Conv1x1() = default;
  Conv1x1(std::size_t c_in, std::size_t c_out) : weight({c_out, c_in}), bias({c_out}) {}

  static Conv1x1 init(std::size_t c_in, std::size_t c_out, double gain, std::mt19937_64& rng) {
    Conv1x1 layer(c_in, c_out);
    fan_in_uniform(layer.weight, c_in, gain, rng);
    return layer;
  }

  std::size_t in_channels() const { return weight.dim(1); }
  std::size_t out_channels() const { return weight.dim(0); }
  std::size_t parameter_count() const { return weight.size() + bias.size(); }

  Var<T> operator()(Var<T> x) {
    Graph<T>& g = x.graph();
    return ops::conv1x1(x, g.param(weight), g.param(bias));
  }

  void append_to(std::vector<NamedParam<T>>& out, const std::string& name) {
    out.push_back({name + ".weight", &weight});
    out.push_back({name + ".bias", &bias});
  }
};

/// 3x3 convolution, padding 1, fixed stride.
template <typename T>
struct Conv3x3 {
  Tensor<T> weight;
  Tensor<T> bias;
  std::size_t stride = 1;

  static Conv3x3 init(std::size_t c_in, std::size_t c_out, std::size_t stride, double gain,
                      std::mt19937_64& rng) {
    Conv3x3 layer{Tensor<T>({c_out, c_in, 3, 3}), Tensor<T>({c_out}), stride};
    fan_in_uniform(layer.weight, 9 * c_in, gain, rng);
    return layer;
  }

  std::size_t parameter_count() const { return weight.size() + bias.size(); }

  Var<T> operator()(Var<T> x) {
    Graph<T>& g = x.graph();
    return ops::conv3x3(x, g.param(weight), g.param(bias), stride);
  }

  void append_to(std::vector<NamedParam<T>>& out, const std::string& name) {
    out.push_back({name + ".weight", &weight});
    out.push_back({name + ".bias", &bias});
  }
};

}  // namespace hgd
