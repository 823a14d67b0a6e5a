#pragma once

#include <Eigen/Dense>
#include <Eigen/SVD>
#include <algorithm>
#include <cmath>
#include <optional>
#include <sstream>
#include <string>

#include "mtr/data/dataset.hpp"
#include "mtr/errors.hpp"
#include "mtr/log.hpp"

namespace mtr::data {

// Per-column centering and scaling with population statistics. Columns whose
// scale falls below 1e-12 are centered only.
struct Standardizer {
  Vector mean;
  Vector scale;

  static constexpr double kMinScale = 1e-12;

  static Standardizer fit(const Matrix& X_train) {
    if (X_train.rows() == 0) throw UsageError("standardize_fit on zero rows");
    Standardizer s;
    s.mean = X_train.colwise().mean().transpose();
    s.scale.resize(X_train.cols());
    for (Eigen::Index j = 0; j < X_train.cols(); ++j) {
      const double var = (X_train.col(j).array() - s.mean(j)).square().mean();
      s.scale(j) = std::sqrt(var);
    }
    return s;
  }

  Matrix apply(const Matrix& X) const {
    if (X.cols() != mean.size()) {
      throw DimensionError("standardize_apply: expected " + std::to_string(mean.size()) +
                           " columns, got " + std::to_string(X.cols()));
    }
    Matrix out = X;
    for (Eigen::Index j = 0; j < X.cols(); ++j) {
      out.col(j).array() -= mean(j);
      if (scale(j) >= kMinScale) out.col(j) /= scale(j);
    }
    return out;
  }
};

inline Standardizer standardize_fit(const Matrix& X_train) { return Standardizer::fit(X_train); }
inline Matrix standardize_apply(const Matrix& X, const Standardizer& s) { return s.apply(X); }

// Principal axes of the centered training matrix. components is [d x k] with
// orthonormal columns; explained_variance[i] = sigma_i^2 / n_train.
struct PcaModel {
  Vector mean;
  Matrix components;
  Vector explained_variance;

  std::size_t input_dim() const { return static_cast<std::size_t>(components.rows()); }
  std::size_t n_components() const { return static_cast<std::size_t>(components.cols()); }

  Matrix transform(const Matrix& X) const {
    if (X.cols() != components.rows()) {
      throw DimensionError("pca_transform: expected " + std::to_string(components.rows()) +
                           " columns, got " + std::to_string(X.cols()));
    }
    return (X.rowwise() - mean.transpose()) * components;
  }

  Matrix inverse_transform(const Matrix& scores) const {
    return (scores * components.transpose()).rowwise() + mean.transpose();
  }
};

inline PcaModel pca_fit(const Matrix& X_train, std::size_t k) {
  const auto n = static_cast<std::size_t>(X_train.rows());
  const auto d = static_cast<std::size_t>(X_train.cols());
  if (n == 0 || d == 0) throw UsageError("pca_fit on an empty matrix");
  if (k == 0) throw ConfigError("pca_fit: k must be positive");
  if (k > std::min(n, d)) {
    log::warn("pca_fit: k=" + std::to_string(k) + " exceeds min(n_train, d)=" +
              std::to_string(std::min(n, d)) + "; clamping");
    k = std::min(n, d);
  }

  PcaModel model;
  model.mean = X_train.colwise().mean().transpose();
  const Eigen::MatrixXd centered = X_train.rowwise() - model.mean.transpose();
  Eigen::BDCSVD<Eigen::MatrixXd> svd(centered, Eigen::ComputeThinV);
  if (svd.info() != Eigen::Success) {
    std::ostringstream os;
    os << "pca_fit: SVD did not converge (" << n << "x" << d << ", Frobenius norm "
       << centered.norm() << ", max |entry| " << centered.cwiseAbs().maxCoeff() << ")";
    throw NumericError(os.str());
  }
  const auto& sv = svd.singularValues();
  const auto kk = static_cast<Eigen::Index>(k);
  model.components = svd.matrixV().leftCols(kk);
  model.explained_variance = sv.head(kk).array().square() / double(n);
  // Deterministic signs: each component's largest-magnitude entry is positive.
  for (Eigen::Index c = 0; c < kk; ++c) {
    Eigen::Index at = 0;
    model.components.col(c).cwiseAbs().maxCoeff(&at);
    if (model.components(at, c) < 0) model.components.col(c) *= -1.0;
  }
  return model;
}

inline Matrix pca_transform(const Matrix& X, const PcaModel& model) {
  return model.transform(X);
}

// Per-feature statistics of the (preprocessed) training matrix, used by the
// mean and minimum imputation strategies.
struct FeatureStats {
  Vector mean;
  Vector minimum;

  static FeatureStats fit(const Matrix& X_train) {
    FeatureStats s;
    s.mean = X_train.colwise().mean().transpose();
    s.minimum = X_train.colwise().minCoeff().transpose();
    return s;
  }
};

// Standardization followed by optional PCA, fitted on training rows only.
struct Preprocessor {
  Standardizer standardizer;
  std::optional<PcaModel> pca;

  static Preprocessor fit(const Matrix& X_train, std::size_t pca_components) {
    Preprocessor p;
    p.standardizer = Standardizer::fit(X_train);
    if (pca_components > 0) p.pca = pca_fit(p.standardizer.apply(X_train), pca_components);
    return p;
  }

  Matrix apply(const Matrix& X) const {
    Matrix z = standardizer.apply(X);
    return pca ? pca->transform(z) : z;
  }

  std::size_t output_dim() const {
    return pca ? pca->n_components() : static_cast<std::size_t>(standardizer.mean.size());
  }
};

}  // namespace mtr::data
