#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "mtr/errors.hpp"
#include "mtr/util/json_reader.hpp"

namespace mtr::model {

struct FTTConfig {
  std::size_t n_features = 0;
  std::size_t token_dim = 192;
  std::size_t n_layers = 3;
  std::size_t n_heads = 8;
  double ffn_factor = 4.0 / 3.0;
  double residual_dropout = 0.0;
  double attention_dropout = 0.2;
  double ffn_dropout = 0.1;
  std::vector<std::size_t> projection_dims{192, 128};
  std::size_t n_classes = 2;
  double mask_rate = 0.45;
  double temperature = 1.0;

  std::size_t ffn_dim() const {
    return std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(double(token_dim) * ffn_factor)));
  }
  std::size_t projection_dim() const { return projection_dims.back(); }

  void validate() const {
    const auto unit = [](double p) { return p >= 0.0 && p < 1.0; };
    if (n_features == 0) throw ConfigError("FTTConfig: n_features must be positive");
    if (token_dim == 0 || n_heads == 0 || token_dim % n_heads != 0) {
      throw ConfigError("FTTConfig: token_dim " + std::to_string(token_dim) +
                        " is not divisible by n_heads " + std::to_string(n_heads));
    }
    if (n_layers == 0) throw ConfigError("FTTConfig: n_layers must be positive");
    if (!(ffn_factor > 0.0)) throw ConfigError("FTTConfig: ffn_factor must be positive");
    if (!unit(residual_dropout) || !unit(attention_dropout) || !unit(ffn_dropout)) {
      throw ConfigError("FTTConfig: dropouts must lie in [0, 1)");
    }
    if (projection_dims.empty()) throw ConfigError("FTTConfig: projection_dims is empty");
    for (auto p : projection_dims)
      if (p == 0) throw ConfigError("FTTConfig: projection width must be positive");
    if (n_classes < 2) throw ConfigError("FTTConfig: n_classes must be at least 2");
    if (!(mask_rate >= 0.0 && mask_rate <= 1.0)) throw ConfigError("FTTConfig: mask_rate must lie in [0, 1]");
    if (!(temperature > 0.0)) throw ConfigError("FTTConfig: temperature must be positive");
  }
};

inline void to_json(Json& j, const FTTConfig& c) {
  j = Json{{"n_features", c.n_features},
           {"token_dim", c.token_dim},
           {"n_layers", c.n_layers},
           {"n_heads", c.n_heads},
           {"ffn_factor", c.ffn_factor},
           {"residual_dropout", c.residual_dropout},
           {"attention_dropout", c.attention_dropout},
           {"ffn_dropout", c.ffn_dropout},
           {"projection_dims", c.projection_dims},
           {"n_classes", c.n_classes},
           {"mask_rate", c.mask_rate},
           {"temperature", c.temperature}};
}

inline void from_json(const Json& j, FTTConfig& c) {
  JsonReader r(j, "ftt");
  r.get("n_features", c.n_features)
      .get("token_dim", c.token_dim)
      .get("n_layers", c.n_layers)
      .get("n_heads", c.n_heads)
      .get("ffn_factor", c.ffn_factor)
      .get("residual_dropout", c.residual_dropout)
      .get("attention_dropout", c.attention_dropout)
      .get("ffn_dropout", c.ffn_dropout)
      .get("projection_dims", c.projection_dims)
      .get("n_classes", c.n_classes)
      .get("mask_rate", c.mask_rate)
      .get("temperature", c.temperature);
  r.finish();
}

struct MlpConfig {
  std::size_t n_features = 0;
  std::size_t n_classes = 2;
  std::size_t n_layers = 3;
  double layer_size_factor = 0.75;
  std::size_t epochs = 100;
  std::size_t batch_size = 64;
  double learning_rate = 1e-3;

  void validate() const {
    if (n_features == 0) throw ConfigError("MlpConfig: n_features must be positive");
    if (n_layers < 1) throw ConfigError("MlpConfig: n_layers must be at least 1");
    if (!(layer_size_factor > 0.0)) throw ConfigError("MlpConfig: layer_size_factor must be positive");
    if (n_classes < 2) throw ConfigError("MlpConfig: n_classes must be at least 2");
    if (epochs == 0 || batch_size == 0) throw ConfigError("MlpConfig: epochs and batch_size must be positive");
    if (!(learning_rate > 0.0)) throw ConfigError("MlpConfig: learning_rate must be positive");
  }

  // Hidden widths: each layer is round(previous * factor), never below the
  // number of classes.
  std::vector<std::size_t> hidden_widths() const {
    std::vector<std::size_t> w;
    double prev = double(n_features);
    for (std::size_t i = 0; i < n_layers; ++i) {
      prev = std::max(double(n_classes), std::round(prev * layer_size_factor));
      w.push_back(static_cast<std::size_t>(prev));
    }
    return w;
  }
};

inline void to_json(Json& j, const MlpConfig& c) {
  j = Json{{"n_features", c.n_features}, {"n_classes", c.n_classes},
           {"n_layers", c.n_layers},     {"layer_size_factor", c.layer_size_factor},
           {"epochs", c.epochs},         {"batch_size", c.batch_size},
           {"learning_rate", c.learning_rate}};
}

inline void from_json(const Json& j, MlpConfig& c) {
  JsonReader r(j, "mlp");
  r.get("n_features", c.n_features)
      .get("n_classes", c.n_classes)
      .get("n_layers", c.n_layers)
      .get("layer_size_factor", c.layer_size_factor)
      .get("epochs", c.epochs)
      .get("batch_size", c.batch_size)
      .get("learning_rate", c.learning_rate);
  r.finish();
}

}  // namespace mtr::model
