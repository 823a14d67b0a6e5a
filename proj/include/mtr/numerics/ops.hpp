#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "mtr/errors.hpp"
#include "mtr/numerics/rng.hpp"
#include "mtr/numerics/tensor.hpp"

// Differentiable primitives. Every op computes its forward value eagerly and,
// when any input requires a gradient, records a closure that maps the output
// gradient back onto the inputs.

namespace mtr::ops {

namespace detail {

template <class T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using ConstMap = Eigen::Map<const RowMatrix<T>>;
template <class T>
using MutMap = Eigen::Map<RowMatrix<T>>;

inline std::string Pair(const Shape& a, const Shape& b) {
  return ShapeString(a) + " and " + ShapeString(b);
}

inline bool IsSuffix(const Shape& small, const Shape& big) {
  if (small.size() > big.size()) return false;
  return std::equal(small.rbegin(), small.rend(), big.rbegin());
}

inline std::size_t LastDim(const Shape& s, const char* op) {
  if (s.empty() || s.back() == 0)
    throw DimensionError(std::string(op) + ": empty last axis in " +
                         ShapeString(s));
  return s.back();
}

using mtr::detail::MakeResult;

}  // namespace detail

// ---------------------------------------------------------------------------
// Linear algebra

// a[..., k] . b[k, n] -> [..., n]. Leading axes of `a` are flattened into rows.
template <Real T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() < 1 || b.rank() != 2 || a.shape().back() != b.dim(0)) {
    throw DimensionError("matmul: incompatible shapes " +
                         detail::Pair(a.shape(), b.shape()));
  }
  const std::size_t k = b.dim(0), n = b.dim(1);
  const std::size_t m = k == 0 ? 0 : a.numel() / k;
  Shape out_shape = a.shape();
  out_shape.back() = n;
  std::vector<T> out(m * n);
  detail::MutMap<T>(out.data(), m, n).noalias() =
      detail::ConstMap<T>(a.values().data(), m, k) *
      detail::ConstMap<T>(b.values().data(), k, n);
  return detail::MakeResult<T>(
      std::move(out_shape), std::move(out), {&a, &b},
      [a, b, m, k, n](std::span<const T> g) mutable {
        detail::ConstMap<T> G(g.data(), m, n);
        if (a.requires_grad()) {
          detail::MutMap<T>(a.mutable_grad().data(), m, k).noalias() +=
              G * detail::ConstMap<T>(b.values().data(), k, n).transpose();
        }
        if (b.requires_grad()) {
          detail::MutMap<T>(b.mutable_grad().data(), k, n).noalias() +=
              detail::ConstMap<T>(a.values().data(), m, k).transpose() * G;
        }
      });
}

// a[m, k] . b[n, k]^T -> [m, n]
template <Real T>
Tensor<T> matmul_transposed(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(1)) {
    throw DimensionError("matmul_transposed: incompatible shapes " +
                         detail::Pair(a.shape(), b.shape()));
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(0);
  std::vector<T> out(m * n);
  detail::MutMap<T>(out.data(), m, n).noalias() =
      detail::ConstMap<T>(a.values().data(), m, k) *
      detail::ConstMap<T>(b.values().data(), n, k).transpose();
  return detail::MakeResult<T>(
      Shape{m, n}, std::move(out), {&a, &b},
      [a, b, m, k, n](std::span<const T> g) mutable {
        detail::ConstMap<T> G(g.data(), m, n);
        if (a.requires_grad()) {
          detail::MutMap<T>(a.mutable_grad().data(), m, k).noalias() +=
              G * detail::ConstMap<T>(b.values().data(), n, k);
        }
        if (b.requires_grad()) {
          detail::MutMap<T>(b.mutable_grad().data(), n, k).noalias() +=
              G.transpose() * detail::ConstMap<T>(a.values().data(), m, k);
        }
      });
}

// x[..., k] . w[k, n] + b[n] -> [..., n] as one tape node.
template <Real T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
  if (x.rank() < 1 || w.rank() != 2 || x.shape().back() != w.dim(0) || b.rank() != 1 ||
      b.dim(0) != w.dim(1)) {
    throw DimensionError("linear: incompatible shapes " + detail::Pair(x.shape(), w.shape()) +
                         " with bias " + ShapeString(b.shape()));
  }
  const std::size_t k = w.dim(0), n = w.dim(1);
  const std::size_t m = k == 0 ? 0 : x.numel() / k;
  Shape out_shape = x.shape();
  out_shape.back() = n;
  std::vector<T> out(m * n);
  detail::MutMap<T> Y(out.data(), m, n);
  Y.noalias() = detail::ConstMap<T>(x.values().data(), m, k) *
                detail::ConstMap<T>(w.values().data(), k, n);
  Y.rowwise() += Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>(b.values().data(), n);
  return detail::MakeResult<T>(
      std::move(out_shape), std::move(out), {&x, &w, &b},
      [x, w, b, m, k, n](std::span<const T> g) mutable {
        detail::ConstMap<T> G(g.data(), m, n);
        if (x.requires_grad()) {
          detail::MutMap<T>(x.mutable_grad().data(), m, k).noalias() +=
              G * detail::ConstMap<T>(w.values().data(), k, n).transpose();
        }
        if (w.requires_grad()) {
          detail::MutMap<T>(w.mutable_grad().data(), k, n).noalias() +=
              detail::ConstMap<T>(x.values().data(), m, k).transpose() * G;
        }
        if (b.requires_grad()) {
          Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>>(b.mutable_grad().data(), n) +=
              G.colwise().sum();
        }
      });
}

// Batched product over the leading axis: a[g, m, k] . b[g, k, n], or
// a[g, m, k] . b[g, n, k]^T when transpose_b is set.
template <Real T>
Tensor<T> bmm(const Tensor<T>& a, const Tensor<T>& b, bool transpose_b = false) {
  if (a.rank() != 3 || b.rank() != 3 || a.dim(0) != b.dim(0) ||
      a.dim(2) != (transpose_b ? b.dim(2) : b.dim(1))) {
    throw DimensionError("bmm: incompatible shapes " +
                         detail::Pair(a.shape(), b.shape()));
  }
  const std::size_t groups = a.dim(0), m = a.dim(1), k = a.dim(2);
  const std::size_t n = transpose_b ? b.dim(1) : b.dim(2);
  std::vector<T> out(groups * m * n);
  const T* pa = a.values().data();
  const T* pb = b.values().data();
  for (std::size_t g = 0; g < groups; ++g) {
    detail::ConstMap<T> A(pa + g * m * k, m, k);
    detail::MutMap<T> C(out.data() + g * m * n, m, n);
    if (transpose_b) {
      C.noalias() = A * detail::ConstMap<T>(pb + g * n * k, n, k).transpose();
    } else {
      C.noalias() = A * detail::ConstMap<T>(pb + g * k * n, k, n);
    }
  }
  return detail::MakeResult<T>(
      Shape{groups, m, n}, std::move(out), {&a, &b},
      [a, b, groups, m, k, n, transpose_b](std::span<const T> g) mutable {
        const T* pa = a.values().data();
        const T* pb = b.values().data();
        T* ga = a.requires_grad() ? a.mutable_grad().data() : nullptr;
        T* gb = b.requires_grad() ? b.mutable_grad().data() : nullptr;
        for (std::size_t i = 0; i < groups; ++i) {
          detail::ConstMap<T> G(g.data() + i * m * n, m, n);
          detail::ConstMap<T> A(pa + i * m * k, m, k);
          if (transpose_b) {
            detail::ConstMap<T> B(pb + i * n * k, n, k);
            if (ga) detail::MutMap<T>(ga + i * m * k, m, k).noalias() += G * B;
            if (gb)
              detail::MutMap<T>(gb + i * n * k, n, k).noalias() += G.transpose() * A;
          } else {
            detail::ConstMap<T> B(pb + i * k * n, k, n);
            if (ga)
              detail::MutMap<T>(ga + i * m * k, m, k).noalias() += G * B.transpose();
            if (gb)
              detail::MutMap<T>(gb + i * k * n, k, n).noalias() += A.transpose() * G;
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Layout

template <Real T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  if (NumElements(shape) != x.numel()) {
    throw DimensionError("reshape: cannot view " + ShapeString(x.shape()) +
                         " as " + ShapeString(shape));
  }
  std::vector<T> out(x.values().begin(), x.values().end());
  return detail::MakeResult<T>(std::move(shape), std::move(out), {&x},
                               [x](std::span<const T> g) mutable {
                                 auto gx = x.mutable_grad();
                                 for (std::size_t i = 0; i < g.size(); ++i)
                                   gx[i] += g[i];
                               });
}

// [A, B, C, D] -> [A, C, B, D]; used to move attention heads in and out of
// the batch axis.
template <Real T>
Tensor<T> swap_axes12(const Tensor<T>& x) {
  if (x.rank() != 4) {
    throw DimensionError("swap_axes12: expected rank 4, got " +
                         ShapeString(x.shape()));
  }
  const std::size_t A = x.dim(0), B = x.dim(1), C = x.dim(2), D = x.dim(3);
  std::vector<T> out(x.numel());
  const T* px = x.values().data();
  for (std::size_t a = 0; a < A; ++a)
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t c = 0; c < C; ++c)
        std::copy_n(px + ((a * B + b) * C + c) * D, D,
                    out.data() + ((a * C + c) * B + b) * D);
  return detail::MakeResult<T>(
      Shape{A, C, B, D}, std::move(out), {&x},
      [x, A, B, C, D](std::span<const T> g) mutable {
        T* gx = x.mutable_grad().data();
        for (std::size_t a = 0; a < A; ++a)
          for (std::size_t b = 0; b < B; ++b)
            for (std::size_t c = 0; c < C; ++c) {
              const T* src = g.data() + ((a * C + c) * B + b) * D;
              T* dst = gx + ((a * B + b) * C + c) * D;
              for (std::size_t d = 0; d < D; ++d) dst[d] += src[d];
            }
      });
}

// Concatenates along the last axis; leading axes must match.
template <Real T>
Tensor<T> concat_last(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() == 0 || a.rank() != b.rank() ||
      !std::equal(a.shape().begin(), a.shape().end() - 1, b.shape().begin())) {
    throw DimensionError("concat_last: incompatible shapes " +
                         detail::Pair(a.shape(), b.shape()));
  }
  const std::size_t na = a.shape().back(), nb = b.shape().back();
  const std::size_t rows = na + nb == 0 ? 0 : (a.numel() / std::max<std::size_t>(na, 1));
  Shape out_shape = a.shape();
  out_shape.back() = na + nb;
  std::vector<T> out(rows * (na + nb));
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy_n(a.values().data() + r * na, na, out.data() + r * (na + nb));
    std::copy_n(b.values().data() + r * nb, nb, out.data() + r * (na + nb) + na);
  }
  return detail::MakeResult<T>(
      std::move(out_shape), std::move(out), {&a, &b},
      [a, b, rows, na, nb](std::span<const T> g) mutable {
        if (a.requires_grad()) {
          T* ga = a.mutable_grad().data();
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < na; ++j) ga[r * na + j] += g[r * (na + nb) + j];
        }
        if (b.requires_grad()) {
          T* gb = b.mutable_grad().data();
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < nb; ++j)
              gb[r * nb + j] += g[r * (na + nb) + na + j];
        }
      });
}

// x[R, C] -> [R] with out[r] = x[r, index[r]].
template <Real T>
Tensor<T> pick_last(const Tensor<T>& x, std::span<const std::size_t> index) {
  if (x.rank() != 2 || index.size() != x.dim(0)) {
    throw DimensionError("pick_last: expected [R, C] with R indices, got " +
                         ShapeString(x.shape()));
  }
  const std::size_t R = x.dim(0), C = x.dim(1);
  std::vector<std::size_t> idx(index.begin(), index.end());
  std::vector<T> out(R);
  for (std::size_t r = 0; r < R; ++r) {
    if (idx[r] >= C)
      throw IndexError("pick_last: index " + std::to_string(idx[r]) +
                       " out of range for " + std::to_string(C) + " columns");
    out[r] = x.value(r * C + idx[r]);
  }
  return detail::MakeResult<T>(Shape{R}, std::move(out), {&x},
                               [x, idx, C](std::span<const T> g) mutable {
                                 T* gx = x.mutable_grad().data();
                                 for (std::size_t r = 0; r < idx.size(); ++r)
                                   gx[r * C + idx[r]] += g[r];
                               });
}

// x[B, T, d] -> [B, d] at one sequence position.
template <Real T>
Tensor<T> take_position(const Tensor<T>& x, std::size_t position) {
  if (x.rank() != 3 || position >= x.dim(1)) {
    throw DimensionError("take_position: position " + std::to_string(position) +
                         " invalid for " + ShapeString(x.shape()));
  }
  const std::size_t B = x.dim(0), L = x.dim(1), d = x.dim(2);
  std::vector<T> out(B * d);
  for (std::size_t b = 0; b < B; ++b)
    std::copy_n(x.values().data() + (b * L + position) * d, d, out.data() + b * d);
  return detail::MakeResult<T>(Shape{B, d}, std::move(out), {&x},
                               [x, B, L, d, position](std::span<const T> g) mutable {
                                 T* gx = x.mutable_grad().data();
                                 for (std::size_t b = 0; b < B; ++b)
                                   for (std::size_t j = 0; j < d; ++j)
                                     gx[(b * L + position) * d + j] += g[b * d + j];
                               });
}

// x[B, M, d], token[d] -> [B, M + 1, d] with the token at position 0.
template <Real T>
Tensor<T> prepend_token(const Tensor<T>& x, const Tensor<T>& token) {
  if (x.rank() != 3 || token.rank() != 1 || token.dim(0) != x.dim(2)) {
    throw DimensionError("prepend_token: incompatible shapes " +
                         detail::Pair(x.shape(), token.shape()));
  }
  const std::size_t B = x.dim(0), M = x.dim(1), d = x.dim(2);
  std::vector<T> out(B * (M + 1) * d);
  for (std::size_t b = 0; b < B; ++b) {
    std::copy_n(token.values().data(), d, out.data() + b * (M + 1) * d);
    std::copy_n(x.values().data() + b * M * d, M * d,
                out.data() + (b * (M + 1) + 1) * d);
  }
  return detail::MakeResult<T>(
      Shape{B, M + 1, d}, std::move(out), {&x, &token},
      [x, token, B, M, d](std::span<const T> g) mutable {
        if (x.requires_grad()) {
          T* gx = x.mutable_grad().data();
          for (std::size_t b = 0; b < B; ++b)
            for (std::size_t j = 0; j < M * d; ++j)
              gx[b * M * d + j] += g[(b * (M + 1) + 1) * d + j];
        }
        if (token.requires_grad()) {
          T* gt = token.mutable_grad().data();
          for (std::size_t b = 0; b < B; ++b)
            for (std::size_t j = 0; j < d; ++j) gt[j] += g[b * (M + 1) * d + j];
        }
      });
}

// Rows of x[B, M, d] flagged in mask[B * M] are replaced by token[d].
template <Real T>
Tensor<T> replace_tokens(const Tensor<T>& x, std::span<const std::uint8_t> mask,
                         const Tensor<T>& token) {
  if (x.rank() != 3 || token.rank() != 1 || token.dim(0) != x.dim(2) ||
      mask.size() != x.dim(0) * x.dim(1)) {
    throw DimensionError("replace_tokens: incompatible shapes " +
                         detail::Pair(x.shape(), token.shape()));
  }
  const std::size_t rows = x.dim(0) * x.dim(1), d = x.dim(2);
  std::vector<std::uint8_t> m(mask.begin(), mask.end());
  std::vector<T> out(x.values().begin(), x.values().end());
  for (std::size_t r = 0; r < rows; ++r)
    if (m[r]) std::copy_n(token.values().data(), d, out.data() + r * d);
  return detail::MakeResult<T>(
      x.shape(), std::move(out), {&x, &token},
      [x, token, m, rows, d](std::span<const T> g) mutable {
        T* gx = x.requires_grad() ? x.mutable_grad().data() : nullptr;
        T* gt = token.requires_grad() ? token.mutable_grad().data() : nullptr;
        for (std::size_t r = 0; r < rows; ++r) {
          const T* src = g.data() + r * d;
          if (m[r]) {
            if (gt)
              for (std::size_t j = 0; j < d; ++j) gt[j] += src[j];
          } else if (gx) {
            for (std::size_t j = 0; j < d; ++j) gx[r * d + j] += src[j];
          }
        }
      });
}

// x[B, M] -> tokens[B, M, d] with tokens[b, f] = x[b, f] * weight[f] + bias[f].
template <Real T>
Tensor<T> feature_tokenize(const Tensor<T>& x, const Tensor<T>& weight,
                           const Tensor<T>& bias) {
  if (x.rank() != 2 || weight.rank() != 2 || weight.shape() != bias.shape() ||
      weight.dim(0) != x.dim(1)) {
    throw DimensionError("feature_tokenize: expected x[B, M] and weight[M, d], got " +
                         detail::Pair(x.shape(), weight.shape()));
  }
  const std::size_t B = x.dim(0), M = x.dim(1), d = weight.dim(1);
  std::vector<T> out(B * M * d);
  const T* px = x.values().data();
  const T* pw = weight.values().data();
  const T* pb = bias.values().data();
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t f = 0; f < M; ++f) {
      const T v = px[b * M + f];
      T* dst = out.data() + (b * M + f) * d;
      for (std::size_t j = 0; j < d; ++j) dst[j] = v * pw[f * d + j] + pb[f * d + j];
    }
  return detail::MakeResult<T>(
      Shape{B, M, d}, std::move(out), {&x, &weight, &bias},
      [x, weight, bias, B, M, d](std::span<const T> g) mutable {
        const T* px = x.values().data();
        const T* pw = weight.values().data();
        T* gx = x.requires_grad() ? x.mutable_grad().data() : nullptr;
        T* gw = weight.requires_grad() ? weight.mutable_grad().data() : nullptr;
        T* gb = bias.requires_grad() ? bias.mutable_grad().data() : nullptr;
        for (std::size_t b = 0; b < B; ++b)
          for (std::size_t f = 0; f < M; ++f) {
            const T* src = g.data() + (b * M + f) * d;
            const T v = px[b * M + f];
            T acc = 0;
            for (std::size_t j = 0; j < d; ++j) {
              if (gw) gw[f * d + j] += src[j] * v;
              if (gb) gb[f * d + j] += src[j];
              acc += src[j] * pw[f * d + j];
            }
            if (gx) gx[b * M + f] += acc;
          }
      });
}

// ---------------------------------------------------------------------------
// Elementwise with trailing-axis broadcasting: the smaller operand's shape
// must be a suffix of the larger one (a scalar is the empty suffix).

namespace detail {

enum class Binary { kAdd, kSub, kMul, kDiv };

// Visits every output index i of a suffix broadcast together with the
// matching input offsets. One operand spans all n elements; the other
// repeats every min(na, nb) elements.
template <class F>
void ForBroadcast(std::size_t n, std::size_t na, std::size_t nb, F&& f) {
  if (n == 0) return;
  if (na == n && nb == n) {
    for (std::size_t i = 0; i < n; ++i) f(i, i, i);
    return;
  }
  const std::size_t inner = std::min(na, nb);
  const bool a_full = na == n;
  for (std::size_t base = 0; base < n; base += inner) {
    if (a_full) {
      for (std::size_t j = 0; j < inner; ++j) f(base + j, base + j, j);
    } else {
      for (std::size_t j = 0; j < inner; ++j) f(base + j, j, base + j);
    }
  }
}

template <Real T>
Tensor<T> BinaryOp(const Tensor<T>& a, const Tensor<T>& b, Binary kind) {
  const bool a_big = a.numel() >= b.numel();
  const Shape& big = a_big ? a.shape() : b.shape();
  const Shape& small = a_big ? b.shape() : a.shape();
  if (!IsSuffix(small, big) && !(NumElements(small) == 1 && small.size() <= 1)) {
    throw DimensionError("elementwise: shapes " + Pair(a.shape(), b.shape()) +
                         " do not broadcast");
  }
  const std::size_t n = NumElements(big);
  const std::size_t na = a.numel(), nb = b.numel();
  const T* pa = a.values().data();
  const T* pb = b.values().data();
  std::vector<T> out(n);
  switch (kind) {
    case Binary::kAdd:
      ForBroadcast(n, na, nb, [&](std::size_t i, std::size_t ia, std::size_t ib) { out[i] = pa[ia] + pb[ib]; });
      break;
    case Binary::kSub:
      ForBroadcast(n, na, nb, [&](std::size_t i, std::size_t ia, std::size_t ib) { out[i] = pa[ia] - pb[ib]; });
      break;
    case Binary::kMul:
      ForBroadcast(n, na, nb, [&](std::size_t i, std::size_t ia, std::size_t ib) { out[i] = pa[ia] * pb[ib]; });
      break;
    case Binary::kDiv:
      ForBroadcast(n, na, nb, [&](std::size_t i, std::size_t ia, std::size_t ib) {
        if constexpr (kStrictArithmetic<T>) {
          if (pb[ib] == T(0)) throw NumericError("division by exact zero");
        }
        out[i] = pa[ia] / pb[ib];
      });
      break;
  }
  return MakeResult<T>(
      big, std::move(out), {&a, &b},
      [a, b, n, na, nb, kind](std::span<const T> g) mutable {
        const T* pa = a.values().data();
        const T* pb = b.values().data();
        T* ga = a.requires_grad() ? a.mutable_grad().data() : nullptr;
        T* gb = b.requires_grad() ? b.mutable_grad().data() : nullptr;
        const auto each = [&](auto f) { ForBroadcast(n, na, nb, f); };
        switch (kind) {
          case Binary::kAdd:
          case Binary::kSub: {
            const T sign = kind == Binary::kAdd ? T(1) : T(-1);
            if (ga) each([&](std::size_t i, std::size_t ia, std::size_t) { ga[ia] += g[i]; });
            if (gb) each([&](std::size_t i, std::size_t, std::size_t ib) { gb[ib] += sign * g[i]; });
            break;
          }
          case Binary::kMul:
            if (ga) each([&](std::size_t i, std::size_t ia, std::size_t ib) { ga[ia] += g[i] * pb[ib]; });
            if (gb) each([&](std::size_t i, std::size_t ia, std::size_t ib) { gb[ib] += g[i] * pa[ia]; });
            break;
          case Binary::kDiv:
            if (ga) each([&](std::size_t i, std::size_t ia, std::size_t ib) { ga[ia] += g[i] / pb[ib]; });
            if (gb)
              each([&](std::size_t i, std::size_t ia, std::size_t ib) {
                gb[ib] -= g[i] * pa[ia] / (pb[ib] * pb[ib]);
              });
            break;
        }
      });
}

template <Real T, class F, class DF>
Tensor<T> UnaryOp(const Tensor<T>& x, F f, DF df) {
  std::vector<T> out(x.numel());
  const T* px = x.values().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(px[i]);
  return MakeResult<T>(x.shape(), std::move(out), {&x},
                       [x, df](std::span<const T> g) mutable {
                         const T* px = x.values().data();
                         T* gx = x.mutable_grad().data();
                         for (std::size_t i = 0; i < g.size(); ++i)
                           gx[i] += g[i] * df(px[i]);
                       });
}

}  // namespace detail

template <Real T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::BinaryOp(a, b, detail::Binary::kAdd);
}
template <Real T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::BinaryOp(a, b, detail::Binary::kSub);
}
template <Real T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::BinaryOp(a, b, detail::Binary::kMul);
}
template <Real T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::BinaryOp(a, b, detail::Binary::kDiv);
}

template <Real T>
Tensor<T> scale(const Tensor<T>& x, T factor) {
  return detail::UnaryOp(
      x, [factor](T v) { return v * factor; }, [factor](T) { return factor; });
}

template <Real T>
Tensor<T> add_scalar(const Tensor<T>& x, T offset) {
  return detail::UnaryOp(
      x, [offset](T v) { return v + offset; }, [](T) { return T(1); });
}

template <Real T>
Tensor<T> relu(const Tensor<T>& x) {
  return detail::UnaryOp(
      x, [](T v) { return v > T(0) ? v : T(0); },
      [](T v) { return v > T(0) ? T(1) : T(0); });
}

// Exact (erf-based) GELU.
template <Real T>
Tensor<T> gelu(const Tensor<T>& x) {
  constexpr T kInvSqrt2 = T(1) / std::numbers::sqrt2_v<T>;
  constexpr T kInvSqrt2Pi = std::numbers::inv_sqrtpi_v<T> * kInvSqrt2;
  return detail::UnaryOp(
      x, [](T v) { return T(0.5) * v * (T(1) + std::erf(v * kInvSqrt2)); },
      [](T v) {
        return T(0.5) * (T(1) + std::erf(v * kInvSqrt2)) +
               v * kInvSqrt2Pi * std::exp(T(-0.5) * v * v);
      });
}

template <Real T>
Tensor<T> exp(const Tensor<T>& x) {
  return detail::UnaryOp(
      x, [](T v) { return std::exp(v); }, [](T v) { return std::exp(v); });
}

template <Real T>
Tensor<T> log(const Tensor<T>& x) {
  if constexpr (kStrictArithmetic<T>) {
    for (T v : x.values())
      if (v <= T(0)) throw NumericError("log of non-positive value");
  }
  return detail::UnaryOp(
      x, [](T v) { return std::log(v); }, [](T v) { return T(1) / v; });
}

template <Real T>
Tensor<T> neg(const Tensor<T>& x) {
  return scale(x, T(-1));
}

// ---------------------------------------------------------------------------
// Reductions

template <Real T>
Tensor<T> sum(const Tensor<T>& x) {
  T total = 0;
  for (T v : x.values()) total += v;
  return detail::MakeResult<T>(Shape{}, std::vector<T>{total}, {&x},
                               [x](std::span<const T> g) mutable {
                                 for (T& gx : x.mutable_grad()) gx += g[0];
                               });
}

template <Real T>
Tensor<T> mean(const Tensor<T>& x) {
  if (x.numel() == 0) throw DimensionError("mean of an empty tensor");
  return scale(sum(x), T(1) / T(x.numel()));
}

// ---------------------------------------------------------------------------
// Row-wise (last axis) normalizations

template <Real T>
Tensor<T> softmax(const Tensor<T>& x) {
  const std::size_t n = detail::LastDim(x.shape(), "softmax");
  const std::size_t rows = x.numel() / n;
  std::vector<T> out(x.numel());
  const T* px = x.values().data();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = px + r * n;
    T* o = out.data() + r * n;
    const T mx = *std::max_element(row, row + n);
    T z = 0;
    for (std::size_t j = 0; j < n; ++j) z += (o[j] = std::exp(row[j] - mx));
    for (std::size_t j = 0; j < n; ++j) o[j] /= z;
  }
  std::vector<T> saved = out;
  return detail::MakeResult<T>(
      x.shape(), std::move(out), {&x},
      [x, saved = std::move(saved), rows, n](std::span<const T> g) mutable {
        T* gx = x.mutable_grad().data();
        for (std::size_t r = 0; r < rows; ++r) {
          const T* s = saved.data() + r * n;
          const T* gr = g.data() + r * n;
          T dot = 0;
          for (std::size_t j = 0; j < n; ++j) dot += gr[j] * s[j];
          for (std::size_t j = 0; j < n; ++j) gx[r * n + j] += s[j] * (gr[j] - dot);
        }
      });
}

template <Real T>
Tensor<T> log_softmax(const Tensor<T>& x) {
  const std::size_t n = detail::LastDim(x.shape(), "log_softmax");
  const std::size_t rows = x.numel() / n;
  std::vector<T> out(x.numel());
  std::vector<T> probs(x.numel());
  const T* px = x.values().data();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = px + r * n;
    const T mx = *std::max_element(row, row + n);
    T z = 0;
    for (std::size_t j = 0; j < n; ++j) z += std::exp(row[j] - mx);
    const T lse = mx + std::log(z);
    for (std::size_t j = 0; j < n; ++j) {
      out[r * n + j] = row[j] - lse;
      probs[r * n + j] = std::exp(row[j] - lse);
    }
  }
  return detail::MakeResult<T>(
      x.shape(), std::move(out), {&x},
      [x, probs = std::move(probs), rows, n](std::span<const T> g) mutable {
        T* gx = x.mutable_grad().data();
        for (std::size_t r = 0; r < rows; ++r) {
          const T* gr = g.data() + r * n;
          T total = 0;
          for (std::size_t j = 0; j < n; ++j) total += gr[j];
          for (std::size_t j = 0; j < n; ++j)
            gx[r * n + j] += gr[j] - probs[r * n + j] * total;
        }
      });
}

// [..., n] -> [...], max-shifted.
template <Real T>
Tensor<T> logsumexp(const Tensor<T>& x) {
  const std::size_t n = detail::LastDim(x.shape(), "logsumexp");
  const std::size_t rows = x.numel() / n;
  Shape out_shape(x.shape().begin(), x.shape().end() - 1);
  std::vector<T> out(rows);
  const T* px = x.values().data();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = px + r * n;
    const T mx = *std::max_element(row, row + n);
    T z = 0;
    for (std::size_t j = 0; j < n; ++j) z += std::exp(row[j] - mx);
    out[r] = mx + std::log(z);
  }
  std::vector<T> saved = out;
  return detail::MakeResult<T>(
      std::move(out_shape), std::move(out), {&x},
      [x, saved = std::move(saved), rows, n](std::span<const T> g) mutable {
        const T* px = x.values().data();
        T* gx = x.mutable_grad().data();
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t j = 0; j < n; ++j)
            gx[r * n + j] += g[r] * std::exp(px[r * n + j] - saved[r]);
      });
}

// Per-row standardization followed by an affine map.
template <Real T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain,
                     const Tensor<T>& bias, T eps = T(1e-5)) {
  const std::size_t d = detail::LastDim(x.shape(), "layer_norm");
  if (gain.numel() != d || bias.numel() != d) {
    throw DimensionError("layer_norm: affine parameters " +
                         detail::Pair(gain.shape(), bias.shape()) +
                         " do not match " + ShapeString(x.shape()));
  }
  if (!(eps > T(0))) throw ConfigError("layer_norm: eps must be positive");
  const std::size_t rows = x.numel() / d;
  std::vector<T> out(x.numel()), xhat(x.numel()), inv_std(rows);
  const T* px = x.values().data();
  const T* pg = gain.values().data();
  const T* pb = bias.values().data();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = px + r * d;
    T mu = 0;
    for (std::size_t j = 0; j < d; ++j) mu += row[j];
    mu /= T(d);
    T var = 0;
    for (std::size_t j = 0; j < d; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= T(d);
    const T is = T(1) / std::sqrt(var + eps);
    inv_std[r] = is;
    for (std::size_t j = 0; j < d; ++j) {
      const T h = (row[j] - mu) * is;
      xhat[r * d + j] = h;
      out[r * d + j] = h * pg[j] + pb[j];
    }
  }
  return detail::MakeResult<T>(
      x.shape(), std::move(out), {&x, &gain, &bias},
      [x, gain, bias, xhat = std::move(xhat), inv_std = std::move(inv_std), rows,
       d](std::span<const T> g) mutable {
        const T* pg = gain.values().data();
        T* gx = x.requires_grad() ? x.mutable_grad().data() : nullptr;
        T* gg = gain.requires_grad() ? gain.mutable_grad().data() : nullptr;
        T* gb = bias.requires_grad() ? bias.mutable_grad().data() : nullptr;
        for (std::size_t r = 0; r < rows; ++r) {
          const T* gr = g.data() + r * d;
          const T* h = xhat.data() + r * d;
          if (gg || gb) {
            for (std::size_t j = 0; j < d; ++j) {
              if (gg) gg[j] += gr[j] * h[j];
              if (gb) gb[j] += gr[j];
            }
          }
          if (gx) {
            T mean_dh = 0, mean_dh_h = 0;
            for (std::size_t j = 0; j < d; ++j) {
              const T dh = gr[j] * pg[j];
              mean_dh += dh;
              mean_dh_h += dh * h[j];
            }
            mean_dh /= T(d);
            mean_dh_h /= T(d);
            for (std::size_t j = 0; j < d; ++j)
              gx[r * d + j] += inv_std[r] * (gr[j] * pg[j] - mean_dh - h[j] * mean_dh_h);
          }
        }
      });
}

// Scales each row to unit Euclidean norm. Rows with norm below 1e-12 map to
// zero (and receive zero gradient).
template <Real T>
Tensor<T> l2_normalize(const Tensor<T>& x) {
  const std::size_t n = detail::LastDim(x.shape(), "l2_normalize");
  const std::size_t rows = x.numel() / n;
  std::vector<T> out(x.numel()), inv_norm(rows);
  const T* px = x.values().data();
  for (std::size_t r = 0; r < rows; ++r) {
    T ss = 0;
    for (std::size_t j = 0; j < n; ++j) ss += px[r * n + j] * px[r * n + j];
    const T norm = std::sqrt(ss);
    inv_norm[r] = norm < T(1e-12) ? T(0) : T(1) / norm;
    for (std::size_t j = 0; j < n; ++j) out[r * n + j] = px[r * n + j] * inv_norm[r];
  }
  std::vector<T> saved = out;
  return detail::MakeResult<T>(
      x.shape(), std::move(out), {&x},
      [x, saved = std::move(saved), inv_norm = std::move(inv_norm), rows,
       n](std::span<const T> g) mutable {
        T* gx = x.mutable_grad().data();
        for (std::size_t r = 0; r < rows; ++r) {
          if (inv_norm[r] == T(0)) continue;
          const T* y = saved.data() + r * n;
          const T* gr = g.data() + r * n;
          T dot = 0;
          for (std::size_t j = 0; j < n; ++j) dot += y[j] * gr[j];
          for (std::size_t j = 0; j < n; ++j)
            gx[r * n + j] += inv_norm[r] * (gr[j] - y[j] * dot);
        }
      });
}

// ---------------------------------------------------------------------------
// Stochastic

// Inverted dropout. Identity in eval mode or at rate 0.
template <Real T>
Tensor<T> dropout(const Tensor<T>& x, double rate, Rng& rng, bool training) {
  if (!(rate >= 0.0 && rate < 1.0)) {
    throw ConfigError("dropout rate must lie in [0, 1), got " + std::to_string(rate));
  }
  if (!training || rate == 0.0) return x;
  const T keep_scale = T(1.0 / (1.0 - rate));
  std::vector<T> mask(x.numel());
  for (T& m : mask) m = rng.uniform() < rate ? T(0) : keep_scale;
  return mul(x, Tensor<T>(x.shape(), std::move(mask)));
}

}  // namespace mtr::ops
