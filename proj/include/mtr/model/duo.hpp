#pragma once

#include <utility>

#include "mtr/errors.hpp"
#include "mtr/model/ftt.hpp"

namespace mtr::model {

template <Real T>
struct PretrainViews {
  Tensor<T> clean;   // [B, p]
  Tensor<T> masked;  // [B, p]
};

// Two modality-specific FTTs fused by element-wise averaging: projected
// latents while pretraining, logits while finetuning. The fusion itself has
// no parameters.
template <Real T>
class DuoFTT {
 public:
  DuoFTT() = default;
  DuoFTT(FTTransformer<T> a, FTTransformer<T> b) : arm_a_(std::move(a)), arm_b_(std::move(b)) {
    if (arm_a_.config().n_classes != arm_b_.config().n_classes) {
      throw ConfigError("DuoFTT: arms disagree on the number of classes (" +
                        std::to_string(arm_a_.config().n_classes) + " vs " +
                        std::to_string(arm_b_.config().n_classes) + ")");
    }
    if (arm_a_.config().projection_dim() != arm_b_.config().projection_dim()) {
      throw ConfigError("DuoFTT: arms disagree on the projection width");
    }
  }

  // Arm parameters are drawn from independent sub-streams of `rng`.
  static DuoFTT init(const FTTConfig& a, const FTTConfig& b, Rng& rng) {
    Rng ra = rng.derive("arm_a"), rb = rng.derive("arm_b");
    return DuoFTT(FTTransformer<T>(a, ra), FTTransformer<T>(b, rb));
  }

  const FTTransformer<T>& arm_a() const { return arm_a_; }
  const FTTransformer<T>& arm_b() const { return arm_b_; }
  FTTransformer<T>& arm_a() { return arm_a_; }
  FTTransformer<T>& arm_b() { return arm_b_; }

  static Tensor<T> fuse(const Tensor<T>& u, const Tensor<T>& v) {
    if (u.shape() != v.shape()) {
      throw DimensionError("DuoFTT: arm outputs " + ShapeString(u.shape()) + " and " +
                           ShapeString(v.shape()) + " cannot be fused");
    }
    return ops::scale(ops::add(u, v), T(0.5));
  }

  // Per-arm projections without masking (the CLIP pair).
  std::pair<Tensor<T>, Tensor<T>> arm_projections(const Tensor<T>& x_a, const Tensor<T>& x_b,
                                                  bool training, Rng* rng) const {
    CheckPair(x_a, x_b);
    ForwardOptions opt{.training = training, .rng = rng};
    return {arm_a_.project(arm_a_.latent(x_a, opt)), arm_b_.project(arm_b_.latent(x_b, opt))};
  }

  // Fused clean projection and fused masked projection; masks are drawn
  // independently in each arm.
  PretrainViews<T> pretrain_forward(const Tensor<T>& x_a, const Tensor<T>& x_b, double p_m, Rng* rng,
                                    bool training = true) const {
    CheckPair(x_a, x_b);
    ForwardOptions clean{.training = training, .rng = rng};
    ForwardOptions masked{.training = training, .mask_rate = p_m, .rng = rng};
    auto zc = fuse(arm_a_.project(arm_a_.latent(x_a, clean)), arm_b_.project(arm_b_.latent(x_b, clean)));
    auto zm = fuse(arm_a_.project(arm_a_.latent(x_a, masked)), arm_b_.project(arm_b_.latent(x_b, masked)));
    return {zc, zm};
  }

  Tensor<T> logits(const Tensor<T>& x_a, const Tensor<T>& x_b, const ForwardOptions& opt_a,
                   const ForwardOptions& opt_b) const {
    CheckPair(x_a, x_b);
    return fuse(arm_a_.logits(x_a, opt_a), arm_b_.logits(x_b, opt_b));
  }

  Tensor<T> logits(const Tensor<T>& x_a, const Tensor<T>& x_b, const ForwardOptions& opt) const {
    return logits(x_a, x_b, opt, opt);
  }

  void attach_classifier(Rng& rng) {
    Rng ra = rng.derive("arm_a"), rb = rng.derive("arm_b");
    arm_a_.attach_classifier(ra);
    arm_b_.attach_classifier(rb);
  }

  NamedParams<T> parameters() const {
    NamedParams<T> p;
    for (auto& [n, t] : arm_a_.parameters()) p.emplace_back("a." + n, t);
    for (auto& [n, t] : arm_b_.parameters()) p.emplace_back("b." + n, t);
    return p;
  }

  DuoFTT clone() const { return DuoFTT(arm_a_.clone(), arm_b_.clone()); }

 private:
  static void CheckPair(const Tensor<T>& x_a, const Tensor<T>& x_b) {
    if (x_a.rank() != 2 || x_b.rank() != 2 || x_a.dim(0) != x_b.dim(0)) {
      throw DimensionError("DuoFTT: modality batches " + ShapeString(x_a.shape()) + " and " +
                           ShapeString(x_b.shape()) + " are not paired");
    }
  }

  FTTransformer<T> arm_a_;
  FTTransformer<T> arm_b_;
};

enum class Arm { kA, kB };

// Independent copy of one arm with its backbone intact and a fresh
// classification head.
template <Real T>
FTTransformer<T> extract_arm(const DuoFTT<T>& duo, Arm which, Rng& head_rng) {
  FTTransformer<T> arm = (which == Arm::kA ? duo.arm_a() : duo.arm_b()).clone();
  arm.attach_classifier(head_rng);
  return arm;
}

}  // namespace mtr::model
