#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mtr/errors.hpp"
#include "mtr/model/config.hpp"
#include "mtr/model/layers.hpp"
#include "mtr/numerics/ops.hpp"
#include "mtr/numerics/rng.hpp"
#include "mtr/numerics/tensor.hpp"

namespace mtr::model {

template <Real T>
struct EncoderLayer {
  LayerNorm<T> attn_norm;
  Linear<T> query, key, value, out;
  LayerNorm<T> ffn_norm;
  Linear<T> ffn_in, ffn_out;

  static EncoderLayer init(const FTTConfig& cfg, Rng& rng) {
    const std::size_t d = cfg.token_dim;
    EncoderLayer l;
    l.attn_norm = LayerNorm<T>::init(d);
    l.query = Linear<T>::init(d, d, rng);
    l.key = Linear<T>::init(d, d, rng);
    l.value = Linear<T>::init(d, d, rng);
    l.out = Linear<T>::init(d, d, rng);
    l.ffn_norm = LayerNorm<T>::init(d);
    l.ffn_in = Linear<T>::init(d, cfg.ffn_dim(), rng);
    l.ffn_out = Linear<T>::init(cfg.ffn_dim(), d, rng);
    return l;
  }

  EncoderLayer clone() const {
    return {attn_norm.clone(), query.clone(), key.clone(),      value.clone(),
            out.clone(),       ffn_norm.clone(), ffn_in.clone(), ffn_out.clone()};
  }

  void collect(const std::string& p, NamedParams<T>& o) const {
    attn_norm.collect(p + ".attn_norm", o);
    query.collect(p + ".query", o);
    key.collect(p + ".key", o);
    value.collect(p + ".value", o);
    out.collect(p + ".out", o);
    ffn_norm.collect(p + ".ffn_norm", o);
    ffn_in.collect(p + ".ffn_in", o);
    ffn_out.collect(p + ".ffn_out", o);
  }
};

// Receives each layer's attention weights, shaped [B * heads, L, L].
template <Real T>
using AttentionObserver = std::function<void(std::size_t layer, const Tensor<T>& weights)>;

template <Real T>
struct MaskedTokens {
  Tensor<T> tokens;
  std::vector<std::uint8_t> mask;  // [B * M], 1 = replaced by the mask token
};

template <Real T>
struct EncoderOutput {
  Tensor<T> class_latent;  // [B, d]
  Tensor<T> tokens;        // [B, M + 1, d] after the final norm
};

// Per-pass options. Dropout and mask draws come from `rng`; it may be null
// when neither is active.
struct ForwardOptions {
  bool training = false;
  double mask_rate = 0.0;
  std::span<const std::uint8_t> forced_mask = {};
  Rng* rng = nullptr;
};

template <Real T>
class FTTransformer {
 public:
  FTTransformer() = default;

  // Parameters are drawn from `rng` in a fixed order: tokenizer, class token,
  // mask token, encoder layers, final norm, projection head.
  FTTransformer(FTTConfig cfg, Rng& rng) : cfg_(std::move(cfg)) {
    cfg_.validate();
    const std::size_t M = cfg_.n_features, d = cfg_.token_dim;
    const double bound = 1.0 / std::sqrt(double(d));
    tok_weight_ = UniformParameter<T>({M, d}, bound, rng);
    tok_bias_ = UniformParameter<T>({M, d}, bound, rng);
    class_token_ = UniformParameter<T>({d}, bound, rng);
    mask_token_ = UniformParameter<T>({d}, bound, rng);
    for (std::size_t i = 0; i < cfg_.n_layers; ++i) layers_.push_back(EncoderLayer<T>::init(cfg_, rng));
    final_norm_ = LayerNorm<T>::init(d);
    projection_ = Stack<T>::init(d, cfg_.projection_dims, rng);
  }

  const FTTConfig& config() const { return cfg_; }
  const Tensor<T>& mask_token() const { return mask_token_; }
  const Tensor<T>& class_token() const { return class_token_; }
  bool has_projection() const { return !projection_.empty(); }
  bool has_classifier() const { return !classifier_.empty(); }

  // x [B, M] -> [B, M, d]; feature f uses its own weight and bias rows.
  Tensor<T> tokenize(const Tensor<T>& x) const {
    if (x.rank() != 2 || x.dim(1) != cfg_.n_features) {
      throw DimensionError("tokenize: expected [B x " + std::to_string(cfg_.n_features) +
                           "], got " + ShapeString(x.shape()));
    }
    return ops::feature_tokenize(x, tok_weight_, tok_bias_);
  }

  // Replaces each token by the mask token with probability p_m, and always
  // where forced_mask is set. One draw is consumed per token either way.
  MaskedTokens<T> apply_mtr_mask(const Tensor<T>& tokens, double p_m, Rng* rng,
                                 std::span<const std::uint8_t> forced = {}) const {
    if (!(p_m >= 0.0 && p_m <= 1.0)) throw ConfigError("mask rate must lie in [0, 1]");
    const std::size_t n = tokens.dim(0) * tokens.dim(1);
    if (!forced.empty() && forced.size() != n) {
      throw DimensionError("apply_mtr_mask: forced mask has " + std::to_string(forced.size()) +
                           " entries, expected " + std::to_string(n));
    }
    MaskedTokens<T> out{tokens, std::vector<std::uint8_t>(n, 0)};
    bool any = false;
    if (p_m > 0.0 && rng == nullptr) throw UsageError("apply_mtr_mask: mask rate > 0 needs an rng");
    for (std::size_t i = 0; i < n; ++i) {
      bool m = p_m > 0.0 && rng->uniform() < p_m;
      if (!forced.empty() && forced[i]) m = true;
      out.mask[i] = m;
      any = any || m;
    }
    if (any) out.tokens = ops::replace_tokens(tokens, out.mask, mask_token_);
    return out;
  }

  EncoderOutput<T> encode(const Tensor<T>& tokens, bool training, Rng* rng,
                          const AttentionObserver<T>* observer = nullptr) const {
    const bool dropout_active = training && (cfg_.residual_dropout > 0 || cfg_.attention_dropout > 0 ||
                                             cfg_.ffn_dropout > 0);
    if (dropout_active && rng == nullptr) throw UsageError("encode: training with dropout needs an rng");
    Rng unused(0, "unused");
    Rng& r = rng ? *rng : unused;
    Tensor<T> h = ops::prepend_token(tokens, class_token_);
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      h = Layer(layers_[i], h, training, r, i, observer);
      if (!AllFinite(h.values())) {
        throw NumericError("encoder layer " + std::to_string(i) + ": non-finite activation");
      }
    }
    Tensor<T> normed = final_norm_(h);
    return {ops::take_position(normed, 0), normed};
  }

  // Class latent of raw features with optional masking; the main entry point
  // used by training and evaluation.
  Tensor<T> latent(const Tensor<T>& x, const ForwardOptions& opt) const {
    Tensor<T> tokens = tokenize(x);
    if (opt.mask_rate > 0.0 || !opt.forced_mask.empty())
      tokens = apply_mtr_mask(tokens, opt.mask_rate, opt.rng, opt.forced_mask).tokens;
    return encode(tokens, opt.training, opt.rng).class_latent;
  }

  Tensor<T> project(const Tensor<T>& latent) const {
    if (projection_.empty()) throw StateError("projection head removed (model is in finetune mode)");
    return projection_(latent);
  }

  Tensor<T> classify(const Tensor<T>& latent) const {
    if (classifier_.empty()) throw StateError("finetune not initialized");
    return classifier_(latent);
  }

  Tensor<T> logits(const Tensor<T>& x, const ForwardOptions& opt) const { return classify(latent(x, opt)); }

  // Swaps the projection head for a fresh classification head (d -> d -> C).
  // Backbone parameters are untouched and keep their identity.
  void attach_classifier(Rng& rng) {
    projection_ = {};
    classifier_ = Stack<T>::init(cfg_.token_dim, {cfg_.token_dim, cfg_.n_classes}, rng);
  }

  // Independent copy: same values, no shared parameter nodes.
  FTTransformer clone() const {
    FTTransformer c;
    c.cfg_ = cfg_;
    c.tok_weight_ = DeepCopy(tok_weight_);
    c.tok_bias_ = DeepCopy(tok_bias_);
    c.class_token_ = DeepCopy(class_token_);
    c.mask_token_ = DeepCopy(mask_token_);
    for (const auto& l : layers_) c.layers_.push_back(l.clone());
    c.final_norm_ = final_norm_.clone();
    c.projection_ = projection_.clone();
    c.classifier_ = classifier_.clone();
    return c;
  }

  NamedParams<T> backbone_parameters() const {
    NamedParams<T> p;
    p.emplace_back("tokenizer.weight", tok_weight_);
    p.emplace_back("tokenizer.bias", tok_bias_);
    p.emplace_back("class_token", class_token_);
    p.emplace_back("mask_token", mask_token_);
    for (std::size_t i = 0; i < layers_.size(); ++i) layers_[i].collect("layer" + std::to_string(i), p);
    final_norm_.collect("final_norm", p);
    return p;
  }

  NamedParams<T> parameters() const {
    NamedParams<T> p = backbone_parameters();
    projection_.collect("projection", p);
    classifier_.collect("classifier", p);
    return p;
  }

 private:
  Tensor<T> Layer(const EncoderLayer<T>& l, const Tensor<T>& h, bool training, Rng& rng,
                  std::size_t index, const AttentionObserver<T>* observer) const {
    const std::size_t B = h.dim(0), L = h.dim(1), d = h.dim(2);
    const std::size_t H = cfg_.n_heads, dh = d / H;
    const auto heads = [&](const Tensor<T>& t) {
      return ops::reshape(ops::swap_axes12(ops::reshape(t, {B, L, H, dh})), {B * H, L, dh});
    };
    Tensor<T> a = l.attn_norm(h);
    Tensor<T> q = heads(l.query(a));
    Tensor<T> k = heads(l.key(a));
    Tensor<T> v = heads(l.value(a));
    Tensor<T> weights = ops::softmax(ops::scale(ops::bmm(q, k, true), T(1.0 / std::sqrt(double(dh)))));
    if (observer) (*observer)(index, weights);
    weights = ops::dropout(weights, cfg_.attention_dropout, rng, training);
    Tensor<T> ctx = ops::bmm(weights, v);
    ctx = ops::reshape(ops::swap_axes12(ops::reshape(ctx, {B, H, L, dh})), {B, L, d});
    Tensor<T> x = ops::add(h, ops::dropout(l.out(ctx), cfg_.residual_dropout, rng, training));

    Tensor<T> f = ops::gelu(l.ffn_in(l.ffn_norm(x)));
    f = ops::dropout(f, cfg_.ffn_dropout, rng, training);
    f = l.ffn_out(f);
    return ops::add(x, ops::dropout(f, cfg_.residual_dropout, rng, training));
  }

  FTTConfig cfg_;
  Tensor<T> tok_weight_, tok_bias_, class_token_, mask_token_;
  std::vector<EncoderLayer<T>> layers_;
  LayerNorm<T> final_norm_;
  Stack<T> projection_;
  Stack<T> classifier_;
};

}  // namespace mtr::model
