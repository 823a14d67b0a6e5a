#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "mtr/numerics/ops.hpp"
#include "mtr/numerics/rng.hpp"
#include "mtr/numerics/tensor.hpp"

namespace mtr::model {

template <Real T>
using NamedParams = std::vector<std::pair<std::string, Tensor<T>>>;

template <Real T>
Tensor<T> UniformParameter(Shape shape, double bound, Rng& rng) {
  std::vector<T> v(NumElements(shape));
  for (T& x : v) x = T(rng.uniform(-bound, bound));
  return Tensor<T>::parameter(std::move(shape), std::move(v));
}

// Fresh parameter with the same shape and values, not sharing the node.
template <Real T>
Tensor<T> DeepCopy(const Tensor<T>& t) {
  return Tensor<T>::parameter(t.shape(), std::vector<T>(t.values().begin(), t.values().end()));
}

// y = x W + b with W [in, out]; weights and bias uniform in +-1/sqrt(in).
template <Real T>
struct Linear {
  Tensor<T> weight;
  Tensor<T> bias;

  static Linear init(std::size_t in, std::size_t out, Rng& rng) {
    const double bound = 1.0 / std::sqrt(double(in));
    Linear l;
    l.weight = UniformParameter<T>({in, out}, bound, rng);
    l.bias = UniformParameter<T>({out}, bound, rng);
    return l;
  }

  Tensor<T> operator()(const Tensor<T>& x) const { return ops::linear(x, weight, bias); }

  Linear clone() const { return {DeepCopy(weight), DeepCopy(bias)}; }

  void collect(const std::string& prefix, NamedParams<T>& out) const {
    out.emplace_back(prefix + ".weight", weight);
    out.emplace_back(prefix + ".bias", bias);
  }
};

template <Real T>
struct LayerNorm {
  Tensor<T> gain;
  Tensor<T> bias;

  static LayerNorm init(std::size_t d) {
    return {Tensor<T>::parameter({d}, std::vector<T>(d, T(1))),
            Tensor<T>::parameter({d}, std::vector<T>(d, T(0)))};
  }

  Tensor<T> operator()(const Tensor<T>& x) const { return ops::layer_norm(x, gain, bias); }

  LayerNorm clone() const { return {DeepCopy(gain), DeepCopy(bias)}; }

  void collect(const std::string& prefix, NamedParams<T>& out) const {
    out.emplace_back(prefix + ".gain", gain);
    out.emplace_back(prefix + ".bias", bias);
  }
};

// Linear layers with ReLU between consecutive ones (none after the last).
template <Real T>
struct Stack {
  std::vector<Linear<T>> layers;

  static Stack init(std::size_t in, const std::vector<std::size_t>& widths, Rng& rng) {
    Stack s;
    for (std::size_t w : widths) {
      s.layers.push_back(Linear<T>::init(in, w, rng));
      in = w;
    }
    return s;
  }

  bool empty() const { return layers.empty(); }
  std::size_t out_dim() const { return layers.back().bias.numel(); }

  Tensor<T> operator()(Tensor<T> x) const {
    for (std::size_t i = 0; i < layers.size(); ++i) {
      x = layers[i](x);
      if (i + 1 < layers.size()) x = ops::relu(x);
    }
    return x;
  }

  Stack clone() const {
    Stack s;
    for (const auto& l : layers) s.layers.push_back(l.clone());
    return s;
  }

  void collect(const std::string& prefix, NamedParams<T>& out) const {
    for (std::size_t i = 0; i < layers.size(); ++i)
      layers[i].collect(prefix + "." + std::to_string(i), out);
  }
};

// Copies parameter values (not nodes) from one set into another with the
// same names and shapes.
template <Real T>
void CopyValues(const NamedParams<T>& from, const NamedParams<T>& to) {
  if (from.size() != to.size()) throw StateError("parameter sets differ in size");
  for (std::size_t i = 0; i < from.size(); ++i) {
    if (from[i].first != to[i].first || from[i].second.shape() != to[i].second.shape()) {
      throw StateError("parameter mismatch at '" + from[i].first + "'");
    }
    auto src = from[i].second.values();
    auto dst = to[i].second.mutable_values();
    std::copy(src.begin(), src.end(), dst.begin());
  }
}

}  // namespace mtr::model
