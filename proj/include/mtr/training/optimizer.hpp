#pragma once

#include <cmath>
#include <vector>

#include "mtr/errors.hpp"
#include "mtr/model/layers.hpp"

namespace mtr::training {

struct AdamWConfig {
  double learning_rate = 1e-4;
  double weight_decay = 1e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// Adaptive-moment optimizer with decoupled weight decay and bias correction.
// Moments live alongside the parameter list, in the same order.
template <Real T>
class AdamW {
 public:
  AdamW(model::NamedParams<T> params, AdamWConfig cfg) : params_(std::move(params)), cfg_(cfg) {
    if (!(cfg_.learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
    if (!(cfg_.weight_decay >= 0.0)) throw ConfigError("weight_decay must be non-negative");
    for (const auto& [name, t] : params_) {
      m_.emplace_back(t.numel(), 0.0);
      v_.emplace_back(t.numel(), 0.0);
    }
  }

  std::size_t steps() const { return step_; }
  const model::NamedParams<T>& parameters() const { return params_; }

  void zero_grad() const {
    for (const auto& [name, t] : params_) t.zero_grad();
  }

  // Applies one update from the accumulated gradients, then clears them.
  void step() {
    for (const auto& [name, t] : params_) {
      for (T g : t.grad())
        if (!std::isfinite(g)) throw DivergenceError("non-finite gradient in '" + name + "'");
    }
    ++step_;
    const double c1 = 1.0 - std::pow(cfg_.beta1, double(step_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, double(step_));
    const double lr = cfg_.learning_rate;
    for (std::size_t p = 0; p < params_.size(); ++p) {
      auto value = params_[p].second.mutable_values();
      auto grad = params_[p].second.grad();
      auto& m = m_[p];
      auto& v = v_[p];
      for (std::size_t i = 0; i < value.size(); ++i) {
        const double g = grad[i];
        m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g;
        v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g * g;
        double w = double(value[i]);
        w -= lr * cfg_.weight_decay * w;
        w -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + cfg_.epsilon);
        value[i] = T(w);
      }
    }
    zero_grad();
  }

 private:
  model::NamedParams<T> params_;
  AdamWConfig cfg_;
  std::vector<std::vector<double>> m_, v_;
  std::size_t step_ = 0;
};

}  // namespace mtr::training
