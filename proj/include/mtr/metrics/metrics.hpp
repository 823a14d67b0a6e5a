#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdint>
#include <map>
#include <numeric>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "mtr/errors.hpp"
#include "mtr/log.hpp"

namespace mtr::metrics {

using Confusion = Eigen::Matrix<std::size_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Row = true class, column = predicted class.
inline Confusion confusion(std::span<const std::size_t> y_true, std::span<const std::size_t> y_pred,
                           std::size_t n_classes) {
  if (y_true.size() != y_pred.size()) throw DimensionError("confusion: label vectors differ in length");
  Confusion m = Confusion::Zero(Eigen::Index(n_classes), Eigen::Index(n_classes));
  for (std::size_t i = 0; i < y_true.size(); ++i) {
    if (y_true[i] >= n_classes || y_pred[i] >= n_classes) {
      throw IndexError("confusion: label outside [0, " + std::to_string(n_classes) + ")");
    }
    ++m(Eigen::Index(y_true[i]), Eigen::Index(y_pred[i]));
  }
  return m;
}

inline double accuracy(std::span<const std::size_t> y_true, std::span<const std::size_t> y_pred) {
  if (y_true.empty()) throw UsageError("accuracy of an empty prediction set");
  if (y_true.size() != y_pred.size()) throw DimensionError("accuracy: label vectors differ in length");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < y_true.size(); ++i) hits += y_true[i] == y_pred[i];
  return double(hits) / double(y_true.size());
}

struct PerClass {
  double precision = 0;
  double recall = 0;
  double f1 = 0;
  std::size_t support = 0;
};

// P_c = tp / (tp + fp), 0 when class c is never predicted; F1_c is 0 when
// P_c + R_c = 0. Both macro means run over all C classes.
inline std::vector<PerClass> per_class(std::span<const std::size_t> y_true, std::span<const std::size_t> y_pred,
                                       std::size_t n_classes) {
  const auto m = confusion(y_true, y_pred, n_classes);
  std::vector<PerClass> out(n_classes);
  for (Eigen::Index c = 0; c < m.rows(); ++c) {
    const double tp = double(m(c, c));
    const double predicted = double(m.col(c).sum());
    const double actual = double(m.row(c).sum());
    auto& pc = out[std::size_t(c)];
    pc.support = m.row(c).sum();
    pc.precision = predicted > 0 ? tp / predicted : 0.0;
    pc.recall = actual > 0 ? tp / actual : 0.0;
    pc.f1 = pc.precision + pc.recall > 0 ? 2 * pc.precision * pc.recall / (pc.precision + pc.recall) : 0.0;
  }
  return out;
}

struct PrecisionF1 {
  double precision = 0;
  double f1 = 0;
};

inline PrecisionF1 macro_precision_f1(std::span<const std::size_t> y_true, std::span<const std::size_t> y_pred,
                                      std::size_t n_classes) {
  if (n_classes < 2) throw ConfigError("macro metrics need at least two classes");
  PrecisionF1 out;
  for (const auto& pc : per_class(y_true, y_pred, n_classes)) {
    out.precision += pc.precision;
    out.f1 += pc.f1;
  }
  out.precision /= double(n_classes);
  out.f1 /= double(n_classes);
  return out;
}

// One-vs-rest AUROC from midpoint ranks (Mann-Whitney). Classes without both
// positives and negatives are skipped with a warning.
inline double macro_auroc(std::span<const std::size_t> y_true, const Eigen::MatrixXd& scores) {
  const std::size_t n = y_true.size();
  if (std::size_t(scores.rows()) != n) throw DimensionError("macro_auroc: score rows differ from labels");
  const std::size_t C = std::size_t(scores.cols());
  std::vector<std::size_t> order(n);
  std::vector<double> ranks(n);
  double total = 0;
  std::size_t used = 0;
  for (std::size_t c = 0; c < C; ++c) {
    std::size_t pos = 0;
    for (auto y : y_true) pos += y == c;
    const std::size_t neg = n - pos;
    if (pos == 0 || neg == 0) {
      log::warn("macro_auroc: class " + std::to_string(c) + " has no " + (pos == 0 ? "positives" : "negatives") +
                " in this split; skipped");
      continue;
    }
    std::iota(order.begin(), order.end(), 0);
    const auto col = scores.col(Eigen::Index(c));
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return col(Eigen::Index(a)) < col(Eigen::Index(b)); });
    for (std::size_t i = 0; i < n;) {
      std::size_t j = i;
      while (j + 1 < n && col(Eigen::Index(order[j + 1])) == col(Eigen::Index(order[i]))) ++j;
      const double mid = 0.5 * double(i + j) + 1.0;
      for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = mid;
      i = j + 1;
    }
    double rank_sum = 0;
    for (std::size_t i = 0; i < n; ++i)
      if (y_true[i] == c) rank_sum += ranks[i];
    total += (rank_sum - double(pos) * double(pos + 1) / 2.0) / (double(pos) * double(neg));
    ++used;
  }
  if (used == 0) throw MetricUndefinedError("macro_auroc: no class has both positives and negatives");
  return total / double(used);
}

// Predicted class per row; ties go to the lowest class index.
inline std::vector<std::size_t> argmax_rows(const Eigen::MatrixXd& scores) {
  std::vector<std::size_t> out(std::size_t(scores.rows()));
  for (Eigen::Index r = 0; r < scores.rows(); ++r) {
    Eigen::Index best = 0;
    for (Eigen::Index c = 1; c < scores.cols(); ++c)
      if (scores(r, c) > scores(r, best)) best = c;
    out[std::size_t(r)] = std::size_t(best);
  }
  return out;
}

struct MetricsReport {
  double accuracy = 0;
  double macro_auroc = 0;
  double macro_f1 = 0;
  double macro_precision = 0;
  std::vector<PerClass> per_class;
  std::size_t n_test = 0;
  std::uint64_t seed = 0;
};

inline MetricsReport evaluate(std::span<const std::size_t> y_true, const Eigen::MatrixXd& probabilities,
                              std::uint64_t seed = 0) {
  const std::size_t C = std::size_t(probabilities.cols());
  const auto y_pred = argmax_rows(probabilities);
  MetricsReport r;
  r.accuracy = accuracy(y_true, y_pred);
  r.macro_auroc = macro_auroc(y_true, probabilities);
  const auto pf = macro_precision_f1(y_true, y_pred, C);
  r.macro_precision = pf.precision;
  r.macro_f1 = pf.f1;
  r.per_class = per_class(y_true, y_pred, C);
  r.n_test = y_true.size();
  r.seed = seed;
  return r;
}

struct MeanSd {
  double mean = 0;
  double sd = 0;
};

// Mean and sample standard deviation (n - 1); a single value has sd 0.
inline MeanSd mean_sd(std::span<const double> xs) {
  if (xs.empty()) throw UsageError("mean_sd of an empty list");
  double mean = 0;
  for (double x : xs) mean += x;
  mean /= double(xs.size());
  // Equal values give sd exactly 0 rather than rounding residue from the mean.
  if (std::all_of(xs.begin(), xs.end(), [&](double x) { return x == xs.front(); })) return {xs.front(), 0.0};
  double ss = 0;
  for (double x : xs) ss += (x - mean) * (x - mean);
  return {mean, std::sqrt(ss / double(xs.size() - 1))};
}

struct SeedSummary {
  MeanSd accuracy, auroc, f1, precision;
  std::size_t n_seeds = 0;
};

inline SeedSummary aggregate_seeds(std::span<const MetricsReport> reports) {
  if (reports.empty()) throw UsageError("aggregate_seeds needs at least one report");
  if (reports.size() == 1) log::warn("aggregate_seeds: a single seed, sd reported as 0");
  std::vector<double> acc, auc, f1, prec;
  for (const auto& r : reports) {
    acc.push_back(r.accuracy);
    auc.push_back(r.macro_auroc);
    f1.push_back(r.macro_f1);
    prec.push_back(r.macro_precision);
  }
  return {mean_sd(acc), mean_sd(auc), mean_sd(f1), mean_sd(prec), reports.size()};
}

// CSV rows. Doubles are written with 17 significant digits so reruns diff
// cleanly and the values round-trip.

struct ResultRow {
  std::string experiment;
  std::string model;
  std::uint64_t seed = 0;
  MetricsReport metrics;
};

inline constexpr const char* kResultHeader = "experiment,model,seed,accuracy,auroc,f1,precision";
inline constexpr const char* kSummaryHeader = "metric,mean,sd";

inline std::string FormatDouble(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline void write_result_rows(std::ostream& os, std::span<const ResultRow> rows, bool header = true) {
  if (header) os << kResultHeader << '\n';
  for (const auto& r : rows) {
    os << r.experiment << ',' << r.model << ',' << r.seed << ',' << FormatDouble(r.metrics.accuracy) << ','
       << FormatDouble(r.metrics.macro_auroc) << ',' << FormatDouble(r.metrics.macro_f1) << ','
       << FormatDouble(r.metrics.macro_precision) << '\n';
  }
}

inline void write_summary(std::ostream& os, const SeedSummary& s, bool header = true) {
  if (header) os << kSummaryHeader << '\n';
  const auto row = [&](const char* name, const MeanSd& m) {
    os << name << ',' << FormatDouble(m.mean) << ',' << FormatDouble(m.sd) << '\n';
  };
  row("accuracy", s.accuracy);
  row("auroc", s.auroc);
  row("f1", s.f1);
  row("precision", s.precision);
}

}  // namespace mtr::metrics
