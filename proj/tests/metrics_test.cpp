#include <cmath>
#include <sstream>

#include "gtest/gtest.h"
#include "mtr/metrics/metrics.hpp"
#include "mtr/numerics/rng.hpp"

namespace mtr::metrics {
namespace {

using Labels = std::vector<std::size_t>;

// One-vs-rest AUROC by enumerating every positive/negative pair; ties count half.
double PairwiseAuroc(const Labels& y, const Eigen::MatrixXd& s, std::size_t c) {
  double wins = 0, pairs = 0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    if (y[i] != c) continue;
    for (std::size_t j = 0; j < y.size(); ++j) {
      if (y[j] == c) continue;
      const double a = s(Eigen::Index(i), Eigen::Index(c)), b = s(Eigen::Index(j), Eigen::Index(c));
      wins += a > b ? 1.0 : a == b ? 0.5 : 0.0;
      pairs += 1;
    }
  }
  return wins / pairs;
}

Eigen::MatrixXd RandomScores(std::size_t n, std::size_t C, Rng& rng, bool coarse) {
  Eigen::MatrixXd s{Eigen::Index(n), Eigen::Index(C)};
  for (Eigen::Index i = 0; i < s.rows(); ++i)
    for (Eigen::Index j = 0; j < s.cols(); ++j) s(i, j) = coarse ? double(rng.below(4)) : rng.uniform();
  return s;
}

Labels RandomLabels(std::size_t n, std::size_t C, Rng& rng) {
  Labels y(n);
  for (auto& v : y) v = rng.below(C);
  return y;
}

const Labels kY{0, 0, 1, 1};
const Labels kPred{0, 1, 1, 1};

TEST(Confusion, CountsAndErrors) {
  const auto m = confusion(kY, kPred, 2);
  EXPECT_EQ(m(0, 0), 1u);
  EXPECT_EQ(m(0, 1), 1u);
  EXPECT_EQ(m(1, 0), 0u);
  EXPECT_EQ(m(1, 1), 2u);
  EXPECT_EQ(m.sum(), 4u);
  const auto diag = confusion(kY, kY, 3);
  EXPECT_EQ(diag(0, 0), 2u);
  EXPECT_EQ(diag(1, 1), 2u);
  EXPECT_EQ(diag.sum(), diag.trace());
  EXPECT_THROW(confusion(Labels{0, 2}, Labels{0, 1}, 2), IndexError);
}

TEST(Accuracy, Examples) {
  EXPECT_EQ(accuracy(kY, kY), 1.0);
  EXPECT_EQ(accuracy(kY, kPred), 0.75);
  EXPECT_EQ(accuracy(kY, Labels{1, 1, 0, 0}), 0.0);
  EXPECT_THROW(accuracy(Labels{}, Labels{}), UsageError);
}

TEST(MacroPrecisionF1, HandComputedAndZeroDivision) {
  const auto pf = macro_precision_f1(kY, kPred, 2);
  EXPECT_NEAR(pf.precision, (1.0 + 2.0 / 3.0) / 2.0, 1e-15);
  EXPECT_NEAR(pf.f1, (2.0 / 3.0 + 0.8) / 2.0, 1e-15);
  const auto perfect = macro_precision_f1(kY, kY, 2);
  EXPECT_EQ(perfect.precision, 1.0);
  EXPECT_EQ(perfect.f1, 1.0);

  // Class 1 never predicted: P_1 = R_1 = F1_1 = 0.
  const auto one = macro_precision_f1(kY, Labels{0, 0, 0, 0}, 2);
  EXPECT_EQ(one.precision, 0.25);
  EXPECT_NEAR(one.f1, (2 * 0.5 / 1.5) / 2.0, 1e-15);
  const auto pc = per_class(kY, Labels{0, 0, 0, 0}, 2);
  EXPECT_EQ(pc[1].precision, 0.0);
  EXPECT_EQ(pc[1].f1, 0.0);
  EXPECT_THROW(macro_precision_f1(kY, kY, 1), ConfigError);
}

TEST(MacroAuroc, Examples) {
  Eigen::MatrixXd perfect(4, 2);
  perfect << 0.9, 0.1, 0.8, 0.2, 0.3, 0.7, 0.1, 0.9;
  EXPECT_EQ(macro_auroc(kY, perfect), 1.0);
  EXPECT_EQ(macro_auroc(kY, Eigen::MatrixXd::Constant(4, 2, 0.5)), 0.5);

  const Labels y{0, 0, 1};
  Eigen::MatrixXd s(3, 2);
  s << 0.9, 0.1, 0.6, 0.4, 0.7, 0.3;
  EXPECT_EQ(PairwiseAuroc(y, s, 1), 0.5);
  // Class 0 sees the mirrored ordering, so its AUROC is also 0.5.
  EXPECT_EQ(macro_auroc(y, s), 0.5);
}

TEST(MacroAuroc, MatchesPairwiseEnumerationWithTies) {
  Rng rng(11, "auroc");
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t C = 2 + rng.below(4), n = 8 + rng.below(30);
    auto y = RandomLabels(n, C, rng);
    for (std::size_t c = 0; c < C; ++c) y[c] = c;
    const auto s = RandomScores(n, C, rng, trial % 2 == 0);
    double expect = 0;
    for (std::size_t c = 0; c < C; ++c) expect += PairwiseAuroc(y, s, c);
    EXPECT_NEAR(macro_auroc(y, s), expect / double(C), 1e-12);
  }
}

TEST(MacroAuroc, SkipsClassesWithoutPositives) {
  Eigen::MatrixXd s(4, 3);
  s.setRandom();
  s.col(0) << 0.9, 0.8, 0.1, 0.2;
  s.col(1) << 0.1, 0.2, 0.9, 0.8;
  EXPECT_EQ(macro_auroc(kY, s), 1.0);
  EXPECT_THROW(macro_auroc(Labels{0, 0}, Eigen::MatrixXd::Zero(2, 1)), MetricUndefinedError);
}

TEST(Properties, RandomizedInvariants) {
  Rng rng(5, "metrics");
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t C = 2 + rng.below(5), n = 5 + rng.below(40);
    auto y = RandomLabels(n, C, rng);
    y[0] = 0;
    y[1] = 1;
    const auto s = RandomScores(n, C, rng, trial % 3 == 0);
    const auto pred = argmax_rows(s);
    const auto r = evaluate(y, s);

    EXPECT_EQ(r.accuracy, double(confusion(y, pred, C).trace()) / double(n));
    std::size_t support = 0;
    for (const auto& pc : r.per_class) support += pc.support;
    EXPECT_EQ(support, r.n_test);
    for (double v : {r.accuracy, r.macro_auroc, r.macro_f1, r.macro_precision}) {
      EXPECT_TRUE(std::isfinite(v));
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
    }

    // Relabel classes with a random permutation.
    std::vector<std::size_t> perm(C);
    std::iota(perm.begin(), perm.end(), 0);
    rng.shuffle(std::span<std::size_t>(perm));
    Labels y2(n), p2(n);
    Eigen::MatrixXd s2(s.rows(), s.cols());
    for (std::size_t i = 0; i < n; ++i) {
      y2[i] = perm[y[i]];
      p2[i] = perm[pred[i]];
    }
    for (std::size_t c = 0; c < C; ++c) s2.col(Eigen::Index(perm[c])) = s.col(Eigen::Index(c));
    const auto a = macro_precision_f1(y, pred, C), b = macro_precision_f1(y2, p2, C);
    EXPECT_NEAR(a.precision, b.precision, 1e-12);
    EXPECT_NEAR(a.f1, b.f1, 1e-12);
    EXPECT_NEAR(macro_auroc(y, s), macro_auroc(y2, s2), 1e-12);

    // Strictly monotone transform of the scores.
    const Eigen::MatrixXd t = (3.0 * s.array()).exp() - 7.0;
    EXPECT_EQ(macro_auroc(y, s), macro_auroc(y, t));
  }
}

TEST(Argmax, TiesGoToLowestIndex) {
  Eigen::MatrixXd s(2, 3);
  s << 0.2, 0.4, 0.4, 1.0, 1.0, 1.0;
  EXPECT_EQ(argmax_rows(s), (Labels{1, 0}));
}

TEST(Aggregate, ClosedFormsAndTwoPassOracle) {
  std::vector<MetricsReport> same(3);
  for (auto& r : same) r.accuracy = 0.4;
  EXPECT_EQ(aggregate_seeds(same).accuracy.sd, 0.0);

  std::vector<MetricsReport> two(2);
  two[0].accuracy = 0.7;
  two[1].accuracy = 0.8;
  const auto s = aggregate_seeds(two);
  EXPECT_NEAR(s.accuracy.mean, 0.75, 1e-15);
  EXPECT_NEAR(s.accuracy.sd, 0.070710678118654752, 1e-12);
  EXPECT_EQ(aggregate_seeds(std::span(two).first(1)).accuracy.sd, 0.0);

  Rng rng(3, "agg");
  std::vector<MetricsReport> ten(10);
  std::vector<double> xs;
  for (auto& r : ten) {
    r.macro_f1 = rng.uniform();
    xs.push_back(r.macro_f1);
  }
  long double mean = 0;
  for (double x : xs) mean += x;
  mean /= 10;
  long double ss = 0;
  for (double x : xs) ss += (x - mean) * (x - mean);
  const auto agg = aggregate_seeds(ten);
  EXPECT_NEAR(agg.f1.mean, double(mean), 1e-12);
  EXPECT_NEAR(agg.f1.sd, double(std::sqrt(ss / 9)), 1e-12);
  EXPECT_THROW(aggregate_seeds({}), UsageError);
}

TEST(Csv, HeadersAndRoundTrip) {
  ResultRow row{"unimodal", "ftt_mtr", 3, {}};
  row.metrics.accuracy = 0.1 + 0.2;
  std::ostringstream out;
  write_result_rows(out, std::span(&row, 1));
  const std::string text = out.str();
  EXPECT_EQ(text.substr(0, text.find('\n')), "experiment,model,seed,accuracy,auroc,f1,precision");
  const auto fields = text.substr(text.find('\n') + 1);
  EXPECT_EQ(std::stod(fields.substr(fields.find("3,") + 2)), 0.1 + 0.2);

  std::ostringstream sum;
  SeedSummary s;
  write_summary(sum, s);
  EXPECT_EQ(sum.str().substr(0, 14), "metric,mean,sd");
}

}  // namespace
}  // namespace mtr::metrics
