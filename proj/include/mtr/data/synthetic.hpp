#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "mtr/data/dataset.hpp"
#include "mtr/errors.hpp"
#include "mtr/numerics/rng.hpp"

namespace mtr::data {

struct BlobsSpec {
  std::size_t n_samples = 2000;
  std::size_t n_features = 200;
  std::size_t n_classes = 10;
  // Standard deviation of each class-mean coordinate.
  double separation = 1.0;
  // Standard deviation of the per-sample isotropic noise.
  double noise = 1.0;
  // Ratio between the largest and smallest class (1 = balanced).
  double imbalance = 1.0;
  std::uint64_t seed = 0;
};

namespace detail {

inline std::vector<std::size_t> ClassSizes(const BlobsSpec& spec) {
  if (spec.n_classes < 2) throw ConfigError("synthetic data needs at least two classes");
  if (spec.n_samples < 10 * spec.n_classes) {
    throw ConfigError("synthetic data needs at least 10 samples per class");
  }
  if (!(spec.imbalance >= 1.0)) throw ConfigError("imbalance factor must be >= 1");
  std::vector<double> weights(spec.n_classes);
  double total = 0;
  for (std::size_t c = 0; c < spec.n_classes; ++c) {
    weights[c] = std::pow(spec.imbalance, -double(c) / double(spec.n_classes - 1));
    total += weights[c];
  }
  std::vector<std::size_t> sizes(spec.n_classes);
  std::size_t assigned = 0;
  for (std::size_t c = 0; c < spec.n_classes; ++c) {
    sizes[c] = static_cast<std::size_t>(std::floor(double(spec.n_samples) * weights[c] / total));
    assigned += sizes[c];
  }
  for (std::size_t c = 0; assigned < spec.n_samples; c = (c + 1) % spec.n_classes) {
    ++sizes[c];
    ++assigned;
  }
  return sizes;
}

inline Matrix ClassMeans(std::size_t n_classes, std::size_t n_features, double separation,
                         Rng& rng) {
  Matrix means(static_cast<Eigen::Index>(n_classes), static_cast<Eigen::Index>(n_features));
  for (Eigen::Index c = 0; c < means.rows(); ++c)
    for (Eigen::Index j = 0; j < means.cols(); ++j) means(c, j) = separation * rng.normal();
  return means;
}

inline TabularDataset Sample(const Matrix& means, const std::vector<std::size_t>& labels,
                             double noise, Rng& rng, const std::string& feature_prefix) {
  TabularDataset ds;
  const auto n = static_cast<Eigen::Index>(labels.size());
  ds.X.resize(n, means.cols());
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto c = static_cast<Eigen::Index>(labels[static_cast<std::size_t>(i)]);
    for (Eigen::Index j = 0; j < means.cols(); ++j)
      ds.X(i, j) = means(c, j) + noise * rng.normal();
  }
  ds.y = labels;
  for (Eigen::Index c = 0; c < means.rows(); ++c)
    ds.class_names.push_back("class" + std::to_string(c));
  for (Eigen::Index j = 0; j < means.cols(); ++j)
    ds.feature_names.push_back(feature_prefix + std::to_string(j));
  for (std::size_t i = 0; i < labels.size(); ++i) ds.sample_ids.push_back("s" + std::to_string(i));
  return ds;
}

inline std::vector<std::size_t> ShuffledLabels(const BlobsSpec& spec, Rng& rng) {
  std::vector<std::size_t> labels;
  const auto sizes = ClassSizes(spec);
  for (std::size_t c = 0; c < sizes.size(); ++c) labels.insert(labels.end(), sizes[c], c);
  rng.shuffle(std::span<std::size_t>(labels));
  return labels;
}

}  // namespace detail

// Class-conditional isotropic Gaussians: x = mu_class + noise * N(0, I) with
// mu_class ~ N(0, separation^2 I).
inline TabularDataset make_blobs(const BlobsSpec& spec) {
  Rng rng(spec.seed, "synthetic");
  const auto labels = detail::ShuffledLabels(spec, rng);
  const Matrix means = detail::ClassMeans(spec.n_classes, spec.n_features, spec.separation, rng);
  return detail::Sample(means, labels, spec.noise, rng, "f");
}

// Two views of one class structure: each modality has its own class means and
// independent noise, and both share sample ids and labels.
inline PairedDatasets make_bimodal_blobs(const BlobsSpec& spec, std::size_t n_features_b) {
  Rng rng(spec.seed, "synthetic");
  const auto labels = detail::ShuffledLabels(spec, rng);
  const Matrix means_a = detail::ClassMeans(spec.n_classes, spec.n_features, spec.separation, rng);
  const Matrix means_b = detail::ClassMeans(spec.n_classes, n_features_b, spec.separation, rng);
  PairedDatasets out;
  out.a = detail::Sample(means_a, labels, spec.noise, rng, "a");
  out.b = detail::Sample(means_b, labels, spec.noise, rng, "b");
  return out;
}

}  // namespace mtr::data
