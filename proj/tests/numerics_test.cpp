#include <cmath>
#include <numeric>

#include "gtest/gtest.h"
#include "mtr/numerics/gradcheck.hpp"
#include "mtr/numerics/ops.hpp"
#include "mtr/numerics/rng.hpp"

namespace mtr {
namespace {

using T64 = Tensor<double>;

T64 Random(Shape shape, Rng& rng, bool requires_grad = true) {
  std::vector<double> v(NumElements(shape));
  for (double& x : v) x = rng.normal();
  return T64(std::move(shape), std::move(v), requires_grad);
}

std::string Describe(const GradientCheckReport& r) {
  std::string out;
  for (const auto& p : r.parameters) {
    out += p.name + ": " + std::to_string(p.max_relative_error) + " at " +
           std::to_string(p.worst_index) + " (tape " + std::to_string(p.tape_gradient) +
           ", numeric " + std::to_string(p.numeric_gradient) + ")\n";
  }
  return out;
}

GradientCheckOptions Primitive() { return {.step = 1e-5, .tolerance = 1e-6}; }

TEST(Rng, SameSeedAndLabelReproduces) {
  Rng a(7, "split"), b(7, "split");
  for (int i = 0; i < 100; ++i) EXPECT_EQ(a.next_u64(), b.next_u64());
}

TEST(Rng, DistinctLabelsDecorrelate) {
  Rng a(7, "split"), b(7, "mask");
  const int n = 20000;
  double sa = 0, sb = 0, sab = 0, saa = 0, sbb = 0;
  int equal = 0;
  for (int i = 0; i < n; ++i) {
    const double x = a.uniform(), y = b.uniform();
    sa += x; sb += y; sab += x * y; saa += x * x; sbb += y * y;
    equal += x == y;
  }
  const double cov = sab / n - (sa / n) * (sb / n);
  const double corr = cov / std::sqrt((saa / n - sa * sa / n / n) * (sbb / n - sb * sb / n / n));
  EXPECT_LT(std::abs(corr), 0.03);
  EXPECT_EQ(equal, 0);
}

TEST(Rng, DerivedStreamIsStable) {
  Rng base(3, "init");
  base.next_u64();
  Rng child1 = base.derive("layer0");
  Rng child2 = Rng(3, "init").derive("layer0");
  EXPECT_EQ(child1.next_u64(), child2.next_u64());
}

TEST(Matmul, IdentityAndSmallProducts) {
  T64 a({2, 2}, {1, 2, 3, 4});
  T64 eye({2, 2}, {1, 0, 0, 1});
  auto c = ops::matmul(a, eye);
  EXPECT_EQ(std::vector<double>(c.values().begin(), c.values().end()),
            (std::vector<double>{1, 2, 3, 4}));
  auto d = ops::matmul(a, T64({2, 1}, {5, 6}));
  EXPECT_EQ(d.shape(), (Shape{2, 1}));
  EXPECT_DOUBLE_EQ(d.value(0), 17);
  EXPECT_DOUBLE_EQ(d.value(1), 39);
}

TEST(Matmul, ShapeMismatchNamesBothShapes) {
  T64 a = T64::zeros({2, 3}), b = T64::zeros({2, 3});
  try {
    ops::matmul(a, b);
    FAIL();
  } catch (const DimensionError& e) {
    EXPECT_NE(std::string(e.what()).find("[2x3] and [2x3]"), std::string::npos);
  }
}

TEST(Matmul, GradientMatchesFiniteDifferences) {
  Rng rng(1, "test");
  T64 a = Random({3, 4}, rng), b = Random({4, 2}, rng);
  auto report = check_gradient([&] { return ops::sum(ops::matmul(a, b)); },
                               {{"a", a}, {"b", b}}, Primitive());
  EXPECT_TRUE(report.passed) << Describe(report);
}

TEST(Matmul, BatchedAndTransposedGradients) {
  Rng rng(2, "test");
  T64 a = Random({2, 3, 4}, rng), b = Random({2, 4, 5}, rng), c = Random({2, 5, 4}, rng);
  T64 w = Random({2, 3, 5}, rng, false);
  auto r1 = check_gradient([&] { return ops::sum(ops::mul(ops::bmm(a, b), w)); },
                           {{"a", a}, {"b", b}}, Primitive());
  EXPECT_TRUE(r1.passed) << Describe(r1);
  auto r2 = check_gradient([&] { return ops::sum(ops::mul(ops::bmm(a, c, true), w)); },
                           {{"a", a}, {"c", c}}, Primitive());
  EXPECT_TRUE(r2.passed) << Describe(r2);
  T64 p = Random({3, 4}, rng), q = Random({5, 4}, rng);
  T64 w2 = Random({3, 5}, rng, false);
  auto r3 = check_gradient(
      [&] { return ops::sum(ops::mul(ops::matmul_transposed(p, q), w2)); },
      {{"p", p}, {"q", q}}, Primitive());
  EXPECT_TRUE(r3.passed) << Describe(r3);
}

TEST(Linear, MatchesMatmulPlusBiasAndGradients) {
  Rng rng(3, "test");
  T64 x = Random({2, 3, 4}, rng), w = Random({4, 5}, rng), b = Random({5}, rng);
  const auto fused = ops::linear(x, w, b);
  const auto plain = ops::add(ops::matmul(ops::reshape(x, {6, 4}), w), b);
  ASSERT_EQ(fused.shape(), (Shape{2, 3, 5}));
  for (std::size_t i = 0; i < fused.numel(); ++i) EXPECT_NEAR(fused.value(i), plain.value(i), 1e-14);
  T64 m = Random({2, 3, 5}, rng, false);
  auto report = check_gradient([&] { return ops::sum(ops::mul(ops::linear(x, w, b), m)); },
                               {{"x", x}, {"w", w}, {"b", b}}, Primitive());
  EXPECT_TRUE(report.passed) << Describe(report);
}

TEST(NoGrad, GuardSkipsRecordingAndRestores) {
  T64 x({2}, {1, 2}, true);
  {
    NoGradGuard guard;
    const auto y = ops::mul(x, x);
    EXPECT_FALSE(y.requires_grad());
    EXPECT_TRUE(y.node()->parents.empty());
    EXPECT_EQ(y.value(1), 4.0);
  }
  EXPECT_TRUE(ops::mul(x, x).requires_grad());
}

TEST(Softmax, ClosedFormsAndShiftInvariance) {
  auto s = ops::softmax(T64({3}, {2.5, 2.5, 2.5}));
  for (double v : s.values()) EXPECT_NEAR(v, 1.0 / 3.0, 1e-15);
  auto t = ops::softmax(T64({2}, {0.0, std::log(2.0)}));
  EXPECT_NEAR(t.value(0), 1.0 / 3.0, 1e-15);
  EXPECT_NEAR(t.value(1), 2.0 / 3.0, 1e-15);

  Rng rng(3, "test");
  T64 x = Random({4, 6}, rng, false);
  auto a = ops::softmax(x);
  auto b = ops::softmax(ops::add_scalar(x, 123.0));
  for (std::size_t i = 0; i < a.numel(); ++i) EXPECT_NEAR(a.value(i), b.value(i), 1e-12);
  for (std::size_t r = 0; r < 4; ++r) {
    double total = 0;
    for (std::size_t j = 0; j < 6; ++j) total += a.value(r * 6 + j);
    EXPECT_NEAR(total, 1.0, 1e-6);
  }
}

TEST(Softmax, EmptyAxisIsDimensionError) {
  EXPECT_THROW(ops::softmax(T64::zeros({3, 0})), DimensionError);
}

TEST(Softmax, FamilyGradients) {
  Rng rng(4, "test");
  T64 x = Random({3, 5}, rng);
  T64 w = Random({3, 5}, rng, false);
  T64 w_row = Random({3}, rng, false);
  for (auto fn : {+[](const T64& v) { return ops::softmax(v); },
                  +[](const T64& v) { return ops::log_softmax(v); }}) {
    auto r = check_gradient([&] { return ops::sum(ops::mul(fn(x), w)); }, {{"x", x}},
                            Primitive());
    EXPECT_TRUE(r.passed) << Describe(r);
  }
  auto r = check_gradient([&] { return ops::sum(ops::mul(ops::logsumexp(x), w_row)); },
                          {{"x", x}}, Primitive());
  EXPECT_TRUE(r.passed) << Describe(r);
}

TEST(LayerNorm, ConstantRowMapsToZero) {
  auto y = ops::layer_norm(T64({1, 4}, {3, 3, 3, 3}), T64::full({4}, 1.0),
                           T64::zeros({4}));
  for (double v : y.values()) EXPECT_EQ(v, 0.0);
}

TEST(LayerNorm, RowIsStandardized) {
  // With a vanishing epsilon the output is exactly standardized.
  auto y = ops::layer_norm(T64({1, 3}, {1, 2, 3}), T64::full({3}, 1.0),
                           T64::zeros({3}), 1e-12);
  const double m = (y.value(0) + y.value(1) + y.value(2)) / 3;
  double var = 0;
  for (double v : y.values()) var += (v - m) * (v - m);
  var /= 3;
  EXPECT_NEAR(m, 0.0, 1e-6);
  EXPECT_NEAR(var, 1.0, 1e-6);

  // Default epsilon shrinks the variance by var / (var + eps).
  auto z = ops::layer_norm(T64({1, 3}, {1, 2, 3}), T64::full({3}, 1.0), T64::zeros({3}));
  double vz = 0;
  for (double v : z.values()) vz += v * v;
  vz /= 3;
  EXPECT_NEAR(vz, (2.0 / 3.0) / (2.0 / 3.0 + 1e-5), 1e-12);
  EXPECT_NEAR(vz, 1.0, 2e-5);
}

TEST(LayerNorm, GradientMatchesFiniteDifferences) {
  Rng rng(5, "test");
  T64 x = Random({3, 6}, rng), g = Random({6}, rng), b = Random({6}, rng);
  T64 w = Random({3, 6}, rng, false);
  auto r = check_gradient(
      [&] { return ops::sum(ops::mul(ops::layer_norm(x, g, b), w)); },
      {{"x", x}, {"gain", g}, {"bias", b}}, {.step = 1e-5, .tolerance = 1e-5});
  EXPECT_TRUE(r.passed) << Describe(r);
}

TEST(Elementwise, BasicValues) {
  auto r = ops::relu(T64({3}, {-1, 0, 2}));
  EXPECT_EQ(std::vector<double>(r.values().begin(), r.values().end()),
            (std::vector<double>{0, 0, 2}));
  EXPECT_DOUBLE_EQ(ops::mean(T64({3}, {2, 4, 6})).item(), 4.0);
  EXPECT_DOUBLE_EQ(ops::sum(T64({3}, {2, 4, 6})).item(), 12.0);
}

TEST(Elementwise, GeluGradientAtHalf) {
  T64 x({1}, {0.5}, true);
  auto r = check_gradient([&] { return ops::sum(ops::gelu(x)); }, {{"x", x}},
                          {.step = 1e-5, .tolerance = 1e-5});
  EXPECT_TRUE(r.passed) << Describe(r);
}

TEST(Elementwise, TrailingBroadcastGradients) {
  Rng rng(6, "test");
  T64 a = Random({2, 3, 4}, rng), b = Random({4}, rng), c = Random({3, 4}, rng);
  T64 pos({3, 4}, std::vector<double>(12, 0.0), true);
  for (std::size_t i = 0; i < 12; ++i) pos.mutable_values()[i] = 1.5 + 0.1 * double(i);
  T64 w = Random({2, 3, 4}, rng, false);
  auto r = check_gradient(
      [&] {
        auto y = ops::add(ops::mul(a, b), ops::sub(c, a));
        y = ops::div(y, pos);
        y = ops::exp(ops::scale(y, 0.1));
        y = ops::add(y, ops::log(pos));
        return ops::sum(ops::mul(y, w));
      },
      {{"a", a}, {"b", b}, {"c", c}, {"pos", pos}}, Primitive());
  EXPECT_TRUE(r.passed) << Describe(r);
}

TEST(Elementwise, IncompatibleBroadcastThrows) {
  EXPECT_THROW(ops::add(T64::zeros({2, 3}), T64::zeros({2})), DimensionError);
}

TEST(Elementwise, DivisionByZeroDependsOnPrecision) {
  EXPECT_THROW(ops::div(T64({2}, {1, 1}), T64({2}, {1, 0})), NumericError);
  Tensor<float> a({2}, {1.f, 1.f}), b({2}, {1.f, 0.f});
  auto c = ops::div(a, b);
  EXPECT_TRUE(std::isinf(c.value(1)));
}

TEST(Elementwise, LayoutOpsGradients) {
  Rng rng(7, "test");
  T64 x = Random({2, 3, 4}, rng), tok = Random({4}, rng);
  T64 feats = Random({2, 3}, rng), w = Random({3, 4}, rng), b = Random({3, 4}, rng);
  std::vector<std::uint8_t> mask{1, 0, 0, 0, 1, 1};
  T64 x4 = Random({2, 3, 2, 5}, rng);
  T64 w1 = Random({2, 4, 4}, rng, false), w2 = Random({2, 2, 3, 5}, rng, false);
  T64 w3 = Random({2, 3, 4}, rng, false), w4 = Random({2, 4}, rng, false);
  auto r = check_gradient(
      [&] {
        auto a = ops::sum(ops::mul(ops::prepend_token(x, tok), w1));
        auto b2 = ops::sum(ops::mul(ops::swap_axes12(x4), w2));
        auto c = ops::sum(ops::mul(ops::replace_tokens(x, mask, tok), w3));
        auto d = ops::sum(ops::mul(ops::take_position(x, 1), w4));
        auto e = ops::sum(ops::mul(ops::feature_tokenize(feats, w, b), w3));
        auto f = ops::sum(ops::mul(ops::reshape(x, {6, 4}), ops::reshape(w3, {6, 4})));
        return ops::add(ops::add(ops::add(a, b2), ops::add(c, d)), ops::add(e, f));
      },
      {{"x", x}, {"tok", tok}, {"x4", x4}, {"feats", feats}, {"w", w}, {"b", b}},
      Primitive());
  EXPECT_TRUE(r.passed) << Describe(r);
}

TEST(Elementwise, NormalizeConcatPickGradients) {
  Rng rng(8, "test");
  T64 a = Random({3, 4}, rng), b = Random({3, 2}, rng);
  std::vector<std::size_t> idx{0, 5, 3};
  auto r = check_gradient(
      [&] {
        auto cat = ops::concat_last(ops::l2_normalize(a), b);
        return ops::sum(ops::pick_last(ops::log_softmax(cat), idx));
      },
      {{"a", a}, {"b", b}}, Primitive());
  EXPECT_TRUE(r.passed) << Describe(r);
}

TEST(Dropout, IdentityCases) {
  Rng rng(9, "dropout");
  T64 x({4}, {1, 2, 3, 4});
  EXPECT_TRUE(ops::dropout(x, 0.0, rng, true).same_node(x));
  EXPECT_TRUE(ops::dropout(x, 0.7, rng, false).same_node(x));
  EXPECT_THROW(ops::dropout(x, 1.0, rng, true), ConfigError);
}

TEST(Dropout, ZeroFractionMatchesRate) {
  Rng rng(10, "dropout");
  T64 x = T64::full({100000}, 1.0);
  auto y = ops::dropout(x, 0.5, rng, true);
  std::size_t zeros = 0;
  for (double v : y.values()) {
    if (v == 0.0) ++zeros;
    else EXPECT_DOUBLE_EQ(v, 2.0);
  }
  EXPECT_NEAR(double(zeros) / 1e5, 0.5, 0.01);
}

TEST(Backward, ClosedFormAndConstantLoss) {
  T64 x({3}, {1, 2, 3}, true);
  backward(ops::sum(ops::mul(x, x)));
  EXPECT_EQ(std::vector<double>(x.grad().begin(), x.grad().end()),
            (std::vector<double>{2, 4, 6}));

  T64 y({3}, {1, 2, 3}, true);
  backward(ops::sum(T64({2}, {5, 6})));
  for (double g : y.grad()) EXPECT_EQ(g, 0.0);
}

TEST(Backward, RejectsNonScalarAndNonFinite) {
  T64 x({3}, {1, 2, 3}, true);
  EXPECT_THROW(backward(ops::mul(x, x)), UsageError);
  T64 z({1}, {std::numeric_limits<double>::infinity()}, true);
  EXPECT_THROW(backward(ops::sum(z)), DivergenceError);
}

TEST(Backward, TapeIsReleasedAfterwards) {
  T64 x({2}, {1, 2}, true);
  auto h = ops::scale(x, 3.0);
  auto loss = ops::sum(h);
  backward(loss);
  EXPECT_TRUE(loss.node()->parents.empty());
  EXPECT_FALSE(static_cast<bool>(h.node()->backward));
  // A second step accumulates only what the new graph contributes.
  x.zero_grad();
  backward(ops::sum(x));
  EXPECT_EQ(x.grad()[0], 1.0);
}

TEST(GradientCheck, SquareIsExact) {
  T64 x({1}, {3.0}, true);
  auto r = check_gradient([&] { return ops::sum(ops::mul(x, x)); }, {{"x", x}},
                          {.step = 1e-5, .tolerance = 1e-8});
  EXPECT_TRUE(r.passed);
  EXPECT_LT(r.max_relative_error, 1e-8);
}

TEST(GradientCheck, LayerNormComposite) {
  Rng rng(11, "test");
  T64 x = Random({2, 5}, rng), g = Random({5}, rng), b = Random({5}, rng);
  auto r = check_gradient(
      [&] {
        auto y = ops::layer_norm(x, g, b);
        return ops::sum(ops::mul(ops::gelu(y), y));
      },
      {{"x", x}, {"gain", g}, {"bias", b}}, {.step = 1e-5, .tolerance = 1e-5});
  EXPECT_TRUE(r.passed) << Describe(r);
}

TEST(GradientCheck, FrozenDropoutPassesLiveDropoutIsInvalid) {
  Rng rng(12, "test");
  T64 x = Random({4, 4}, rng);
  auto frozen = [&] {
    Rng fixed(99, "dropout");
    return ops::sum(ops::mul(ops::dropout(x, 0.3, fixed, true), x));
  };
  EXPECT_TRUE(check_gradient(frozen, {{"x", x}}, Primitive()).passed);

  Rng live(99, "dropout");
  auto unfrozen = [&] { return ops::sum(ops::mul(ops::dropout(x, 0.3, live, true), x)); };
  EXPECT_THROW(check_gradient(unfrozen, {{"x", x}}, Primitive()), OracleInvalidError);
}

TEST(Determinism, IdenticalInputsGiveIdenticalOutputs) {
  auto run = [] {
    Rng rng(13, "init");
    T64 a = Random({5, 7}, rng), b = Random({7, 3}, rng);
    Rng drop(13, "dropout");
    return ops::sum(ops::softmax(ops::dropout(ops::matmul(a, b), 0.2, drop, true))).item();
  };
  const double first = run(), second = run();
  EXPECT_EQ(std::memcmp(&first, &second, sizeof(double)), 0);
}

}  // namespace
}  // namespace mtr
