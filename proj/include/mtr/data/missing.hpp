#pragma once

#include <cstdint>
#include <string>
#include <string_view>

#include "mtr/data/dataset.hpp"
#include "mtr/data/preprocess.hpp"
#include "mtr/errors.hpp"
#include "mtr/numerics/rng.hpp"

namespace mtr::data {

struct MissingnessConfig {
  double p_incomplete = 0.0;  // probability a sample is incomplete
  double p_missing = 0.0;     // per-feature probability within an incomplete sample
  std::uint64_t seed = 0;

  void validate() const {
    const auto ok = [](double p) { return p >= 0.0 && p <= 1.0; };
    if (!ok(p_incomplete) || !ok(p_missing)) {
      throw ConfigError("missingness probabilities must lie in [0, 1]");
    }
  }
};

struct MissingSample {
  Matrix X;          // masked cells set to NaN
  MaskMatrix mask;   // 1 = missing
  Matrix original;   // untouched copy, for audit
};

// Two-stage Bernoulli masking from the "mask" stream. Every sample and every
// cell consumes exactly one draw regardless of the probabilities, so masks at
// a smaller p_missing are nested inside masks at a larger one for the same
// seed.
inline MissingSample synthesize_missing(const Matrix& X, const MissingnessConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.seed, "mask");
  MissingSample out{X, MaskMatrix::Zero(X.rows(), X.cols()), X};
  for (Eigen::Index i = 0; i < X.rows(); ++i) {
    const bool incomplete = rng.uniform() < cfg.p_incomplete;
    for (Eigen::Index j = 0; j < X.cols(); ++j) {
      const bool drop = rng.uniform() < cfg.p_missing;
      if (incomplete && drop) {
        out.mask(i, j) = 1;
        out.X(i, j) = kMissing;
      }
    }
  }
  return out;
}

enum class ImputeStrategy { kMean, kMinimum, kMaskToken };

inline ImputeStrategy parse_impute_strategy(std::string_view name) {
  if (name == "mean") return ImputeStrategy::kMean;
  if (name == "minimum") return ImputeStrategy::kMinimum;
  if (name == "mask_token_passthrough" || name == "mask_token") return ImputeStrategy::kMaskToken;
  throw ConfigError("unknown imputation strategy '" + std::string(name) + "'");
}

inline std::string to_string(ImputeStrategy s) {
  switch (s) {
    case ImputeStrategy::kMean: return "mean";
    case ImputeStrategy::kMinimum: return "minimum";
    case ImputeStrategy::kMaskToken: return "mask_token_passthrough";
  }
  return "unknown";
}

// Fills masked cells from training statistics. The mask-token strategy writes
// a zero placeholder and leaves substitution to the model, which swaps in its
// learned token after tokenization; the caller keeps passing the mask along.
inline Matrix impute(const Matrix& X, const MaskMatrix& mask, ImputeStrategy strategy,
                     const FeatureStats& train_stats) {
  if (mask.rows() != X.rows() || mask.cols() != X.cols()) {
    throw DimensionError("impute: mask shape does not match data");
  }
  Matrix out = X;
  for (Eigen::Index i = 0; i < X.rows(); ++i) {
    for (Eigen::Index j = 0; j < X.cols(); ++j) {
      if (!mask(i, j)) continue;
      switch (strategy) {
        case ImputeStrategy::kMean: out(i, j) = train_stats.mean(j); break;
        case ImputeStrategy::kMinimum: out(i, j) = train_stats.minimum(j); break;
        case ImputeStrategy::kMaskToken: out(i, j) = 0.0; break;
      }
    }
  }
  return out;
}

}  // namespace mtr::data
