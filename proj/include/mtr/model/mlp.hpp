#pragma once

#include "mtr/model/config.hpp"
#include "mtr/model/ftt.hpp"
#include "mtr/model/layers.hpp"

namespace mtr::model {

// Fully connected ReLU network: hidden widths from MlpConfig, then C logits.
template <Real T>
class Mlp {
 public:
  Mlp() = default;
  Mlp(MlpConfig cfg, Rng& rng) : cfg_(std::move(cfg)) {
    cfg_.validate();
    auto widths = cfg_.hidden_widths();
    widths.push_back(cfg_.n_classes);
    net_ = Stack<T>::init(cfg_.n_features, widths, rng);
  }

  const MlpConfig& config() const { return cfg_; }

  // The options are accepted for interface parity with the FTT; masking and
  // dropout do not apply.
  Tensor<T> logits(const Tensor<T>& x, const ForwardOptions& = {}) const {
    if (x.rank() != 2 || x.dim(1) != cfg_.n_features) {
      throw DimensionError("mlp: expected [B x " + std::to_string(cfg_.n_features) + "], got " +
                           ShapeString(x.shape()));
    }
    return net_(x);
  }

  NamedParams<T> parameters() const {
    NamedParams<T> p;
    net_.collect("mlp", p);
    return p;
  }

  Mlp clone() const {
    Mlp m;
    m.cfg_ = cfg_;
    m.net_ = net_.clone();
    return m;
  }

 private:
  MlpConfig cfg_;
  Stack<T> net_;
};

}  // namespace mtr::model
