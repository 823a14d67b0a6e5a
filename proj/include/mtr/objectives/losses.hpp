#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "mtr/errors.hpp"
#include "mtr/log.hpp"
#include "mtr/numerics/ops.hpp"
#include "mtr/numerics/tensor.hpp"

namespace mtr::objectives {

// u.v / (|u| |v|). Either norm below 1e-12 gives 0 and a warning.
inline double cosine_sim(std::span<const double> u, std::span<const double> v) {
  if (u.size() != v.size()) throw DimensionError("cosine_sim: length mismatch");
  double dot = 0, uu = 0, vv = 0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    if (std::isnan(u[i]) || std::isnan(v[i])) throw NumericError("cosine_sim: NaN input");
    dot += u[i] * v[i];
    uu += u[i] * u[i];
    vv += v[i] * v[i];
  }
  const double nu = std::sqrt(uu), nv = std::sqrt(vv);
  if (nu < 1e-12 || nv < 1e-12) {
    log::warn("cosine_sim: degenerate (near-zero) vector, similarity set to 0");
    return 0.0;
  }
  return dot / (nu * nv);
}

struct ContrastiveOptions {
  double temperature = 1.0;
  // Adds the mirrored term anchored on the second view.
  bool symmetric = false;
};

namespace detail {

template <Real T>
void CheckBatch(const Tensor<T>& a, const Tensor<T>& b, const ContrastiveOptions& opt,
                const char* name) {
  if (a.rank() != 2 || a.shape() != b.shape()) {
    throw DimensionError(std::string(name) + ": expected two [N x p] batches, got " +
                         ShapeString(a.shape()) + " and " + ShapeString(b.shape()));
  }
  if (a.dim(0) < 2) {
    throw UsageError(std::string(name) + ": batch size must be at least 2, got " +
                     std::to_string(a.dim(0)));
  }
  if (!(opt.temperature > 0.0)) throw ConfigError(std::string(name) + ": temperature must be > 0");
  if (!AllFinite(a.values()) || !AllFinite(b.values())) {
    throw NumericError(std::string(name) + ": non-finite projection");
  }
}

// Constant [N x N] with a large negative diagonal; added to logits it removes
// self-similarity from a row's log-sum-exp.
template <Real T>
Tensor<T> DiagonalExclusion(std::size_t n) {
  std::vector<T> v(n * n, T(0));
  for (std::size_t i = 0; i < n; ++i) v[i * n + i] = T(-1e30);
  return Tensor<T>({n, n}, std::move(v));
}

// One anchored direction: rows of `anchors` against the other anchors and
// all of `others`, positive at the matching row of `others`.
template <Real T>
Tensor<T> NtxentDirection(const Tensor<T>& anchors, const Tensor<T>& others, T inv_tau) {
  const std::size_t n = anchors.dim(0);
  auto self = ops::add(ops::scale(ops::matmul_transposed(anchors, anchors), inv_tau),
                       DiagonalExclusion<T>(n));
  auto cross = ops::scale(ops::matmul_transposed(anchors, others), inv_tau);
  std::vector<std::size_t> diag(n);
  std::iota(diag.begin(), diag.end(), 0);
  auto lse = ops::logsumexp(ops::concat_last(self, cross));
  return ops::sum(ops::sub(lse, ops::pick_last(cross, diag)));
}

template <Real T>
Tensor<T> SoftmaxDirection(const Tensor<T>& a, const Tensor<T>& b, T inv_tau) {
  const std::size_t n = a.dim(0);
  auto s = ops::scale(ops::matmul_transposed(a, b), inv_tau);
  std::vector<std::size_t> diag(n);
  std::iota(diag.begin(), diag.end(), 0);
  return ops::sum(ops::sub(ops::logsumexp(s), ops::pick_last(s, diag)));
}

}  // namespace detail

// Summed NTXent over anchors z_i with positive z~_i; negatives are every other
// clean and masked projection in the batch.
template <Real T>
Tensor<T> ntxent(const Tensor<T>& z, const Tensor<T>& z_masked, const ContrastiveOptions& opt = {}) {
  detail::CheckBatch(z, z_masked, opt, "ntxent");
  const T inv_tau = T(1.0 / opt.temperature);
  auto zn = ops::l2_normalize(z);
  auto mn = ops::l2_normalize(z_masked);
  auto loss = detail::NtxentDirection(zn, mn, inv_tau);
  if (opt.symmetric) loss = ops::add(loss, detail::NtxentDirection(mn, zn, inv_tau));
  return loss;
}

// Symmetric CLIP loss over paired latents u_i (arm A) and v_i (arm B); each
// row's softmax runs over the whole batch, positive included.
template <Real T>
Tensor<T> clip_loss(const Tensor<T>& u, const Tensor<T>& v, const ContrastiveOptions& opt = {}) {
  detail::CheckBatch(u, v, opt, "clip_loss");
  const T inv_tau = T(1.0 / opt.temperature);
  auto un = ops::l2_normalize(u);
  auto vn = ops::l2_normalize(v);
  return ops::add(detail::SoftmaxDirection(un, vn, inv_tau),
                  detail::SoftmaxDirection(vn, un, inv_tau));
}

// Mean cross-entropy of integer targets under softmax(logits).
template <Real T>
Tensor<T> cross_entropy(const Tensor<T>& logits, std::span<const std::size_t> targets) {
  if (logits.rank() != 2 || logits.dim(0) != targets.size()) {
    throw DimensionError("cross_entropy: logits " + ShapeString(logits.shape()) + " vs " +
                         std::to_string(targets.size()) + " targets");
  }
  for (std::size_t t : targets) {
    if (t >= logits.dim(1)) {
      throw IndexError("cross_entropy: target " + std::to_string(t) + " outside [0, " +
                       std::to_string(logits.dim(1)) + ")");
    }
  }
  return ops::neg(ops::mean(ops::pick_last(ops::log_softmax(logits), targets)));
}

// Reference implementations: direct double loops over the written-out
// definitions, 64-bit, no shared code with the vectorized path.

inline double ntxent_bruteforce(const Eigen::MatrixXd& z, const Eigen::MatrixXd& zt,
                                const ContrastiveOptions& opt = {}) {
  const auto n = z.rows();
  if (n < 2 || zt.rows() != n || zt.cols() != z.cols()) {
    throw UsageError("ntxent_bruteforce: need matching batches with N >= 2");
  }
  if (n > 64) throw UsageError("ntxent_bruteforce: N must be at most 64");
  const auto sim = [&](const Eigen::MatrixXd& a, Eigen::Index i, const Eigen::MatrixXd& b,
                       Eigen::Index k) {
    double dot = 0, aa = 0, bb = 0;
    for (Eigen::Index j = 0; j < a.cols(); ++j) {
      dot += a(i, j) * b(k, j);
      aa += a(i, j) * a(i, j);
      bb += b(k, j) * b(k, j);
    }
    return dot / (std::sqrt(aa) * std::sqrt(bb)) / opt.temperature;
  };
  const auto direction = [&](const Eigen::MatrixXd& anchor, const Eigen::MatrixXd& other) {
    double total = 0;
    for (Eigen::Index i = 0; i < n; ++i) {
      const double pos = sim(anchor, i, other, i);
      double denom = std::exp(pos);
      for (Eigen::Index k = 0; k < n; ++k) {
        if (k == i) continue;
        denom += std::exp(sim(anchor, i, anchor, k));
        denom += std::exp(sim(anchor, i, other, k));
      }
      total += -std::log(std::exp(pos) / denom);
    }
    return total;
  };
  double loss = direction(z, zt);
  if (opt.symmetric) loss += direction(zt, z);
  return loss;
}

inline double clip_bruteforce(const Eigen::MatrixXd& u, const Eigen::MatrixXd& v,
                              const ContrastiveOptions& opt = {}) {
  const auto n = u.rows();
  if (n < 2 || v.rows() != n) throw UsageError("clip_bruteforce: need matching batches, N >= 2");
  const auto sim = [&](const Eigen::MatrixXd& a, Eigen::Index i, const Eigen::MatrixXd& b,
                       Eigen::Index k) {
    return a.row(i).dot(b.row(k)) / (a.row(i).norm() * b.row(k).norm()) / opt.temperature;
  };
  double loss = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    double du = 0, dv = 0;
    for (Eigen::Index k = 0; k < n; ++k) {
      du += std::exp(sim(u, i, v, k));
      dv += std::exp(sim(v, i, u, k));
    }
    loss -= std::log(std::exp(sim(u, i, v, i)) / du);
    loss -= std::log(std::exp(sim(v, i, u, i)) / dv);
  }
  return loss;
}

}  // namespace mtr::objectives
