#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "mtr/errors.hpp"
#include "mtr/numerics/rng.hpp"

namespace mtr::data {

// Index sets for one seed. test/train/val partition the dataset;
// labelled ⊆ train; set1/set2 partition train \ labelled when an unmatched
// plan has been derived.
struct SplitPlan {
  std::vector<std::size_t> test_idx;
  std::vector<std::size_t> train_idx;
  std::vector<std::size_t> val_idx;
  std::vector<std::size_t> labelled_idx;
  std::vector<std::size_t> set1_idx;
  std::vector<std::size_t> set2_idx;
  std::uint64_t seed = 0;
  double label_fraction = 1.0;
};

struct SplitOptions {
  double test_fraction = 0.2;
  double val_fraction_of_remainder = 0.1;
  double label_fraction = 1.0;
};

// Splits `total` items across classes in proportion to `counts`, flooring the
// quotas and handing the leftover units to the largest fractional remainders
// (ties to the lower class index). Every count stays within one of its quota.
inline std::vector<std::size_t> largest_remainder(std::span<const std::size_t> counts,
                                                  double fraction) {
  std::size_t n = 0;
  for (auto c : counts) n += c;
  const auto total = static_cast<std::size_t>(std::llround(fraction * double(n)));
  std::vector<std::size_t> out(counts.size());
  std::vector<std::pair<double, std::size_t>> remainders;
  std::size_t assigned = 0;
  for (std::size_t c = 0; c < counts.size(); ++c) {
    const double quota = fraction * double(counts[c]);
    out[c] = std::min<std::size_t>(counts[c], static_cast<std::size_t>(std::floor(quota)));
    assigned += out[c];
    remainders.emplace_back(quota - std::floor(quota), c);
  }
  std::stable_sort(remainders.begin(), remainders.end(),
                   [](const auto& l, const auto& r) { return l.first > r.first; });
  for (std::size_t i = 0; assigned < total && i < remainders.size(); ++i) {
    const std::size_t c = remainders[i].second;
    if (out[c] < counts[c]) {
      ++out[c];
      ++assigned;
    }
  }
  return out;
}

namespace detail {

inline std::vector<std::vector<std::size_t>> GroupByClass(std::span<const std::size_t> idx,
                                                          std::span<const std::size_t> y,
                                                          std::size_t n_classes) {
  std::vector<std::vector<std::size_t>> groups(n_classes);
  for (std::size_t i : idx) groups[y[i]].push_back(i);
  return groups;
}

struct TwoWay {
  std::vector<std::size_t> first;
  std::vector<std::size_t> second;
};

// Stratified two-way split of `idx`: `fraction` of each class goes to
// `first`. Members are drawn after a per-class shuffle from `rng`.
inline TwoWay StratifiedTwoWay(std::span<const std::size_t> idx,
                               std::span<const std::size_t> y, std::size_t n_classes,
                               double fraction, Rng& rng,
                               std::size_t min_first_per_class = 0) {
  auto groups = GroupByClass(idx, y, n_classes);
  std::vector<std::size_t> counts(n_classes);
  for (std::size_t c = 0; c < n_classes; ++c) counts[c] = groups[c].size();
  auto take = largest_remainder(counts, fraction);
  TwoWay out;
  for (std::size_t c = 0; c < n_classes; ++c) {
    if (counts[c] > 0) take[c] = std::max(take[c], std::min(min_first_per_class, counts[c]));
    rng.shuffle(std::span<std::size_t>(groups[c]));
    out.first.insert(out.first.end(), groups[c].begin(), groups[c].begin() + long(take[c]));
    out.second.insert(out.second.end(), groups[c].begin() + long(take[c]), groups[c].end());
  }
  std::sort(out.first.begin(), out.first.end());
  std::sort(out.second.begin(), out.second.end());
  return out;
}

// Per-class counts for test / validation / train. Split sizes are fixed
// first; each class then receives floor or ceil of its proportional share in
// every split, so all three splits stay within one sample of the global class
// proportions.
struct ThreeWayCounts {
  std::vector<std::size_t> test, val, train;
};

inline ThreeWayCounts AllocateThreeWay(std::span<const std::size_t> counts, double test_fraction,
                                       double val_fraction_of_remainder) {
  std::size_t n = 0;
  for (auto c : counts) n += c;
  const auto test_total = static_cast<std::size_t>(std::llround(test_fraction * double(n)));
  const auto val_total = static_cast<std::size_t>(
      std::llround(val_fraction_of_remainder * double(n - test_total)));
  const std::size_t train_total = n - test_total - val_total;

  ThreeWayCounts out;
  out.test = largest_remainder(counts, double(test_total) / double(std::max<std::size_t>(n, 1)));
  const std::size_t C = counts.size();
  out.val.assign(C, 0);
  out.train.assign(C, 0);
  std::vector<std::size_t> hi(C);
  std::vector<std::pair<double, std::size_t>> order;
  std::size_t assigned = 0;
  for (std::size_t c = 0; c < C; ++c) {
    const double share = double(counts[c]) / double(n);
    const double q_val = double(val_total) * share;
    const double q_train = double(train_total) * share;
    const auto rest = static_cast<long>(counts[c] - out.test[c]);
    long lo_c = std::max<long>(long(std::floor(q_val)), rest - long(std::ceil(q_train)));
    long hi_c = std::min<long>(long(std::ceil(q_val)), rest - long(std::floor(q_train)));
    lo_c = std::clamp<long>(lo_c, 0, rest);
    hi_c = std::clamp<long>(hi_c, lo_c, rest);
    out.val[c] = std::size_t(lo_c);
    hi[c] = std::size_t(hi_c);
    assigned += out.val[c];
    order.emplace_back(q_val - double(lo_c), c);
  }
  std::stable_sort(order.begin(), order.end(),
                   [](const auto& l, const auto& r) { return l.first > r.first; });
  for (const auto& [rem, c] : order) {
    if (assigned >= val_total) break;
    if (out.val[c] < hi[c]) {
      ++out.val[c];
      ++assigned;
    }
  }
  for (std::size_t c = 0; c < C; ++c) out.train[c] = counts[c] - out.test[c] - out.val[c];
  return out;
}

inline void RequireEveryClass(std::span<const std::size_t> idx, std::span<const std::size_t> y,
                              std::size_t n_classes, const char* split_name) {
  std::vector<std::size_t> counts(n_classes, 0);
  for (std::size_t i : idx) ++counts[y[i]];
  for (std::size_t c = 0; c < n_classes; ++c) {
    if (counts[c] == 0) {
      throw StratificationError("class " + std::to_string(c) +
                                " is too small to appear in the " + split_name + " split");
    }
  }
}

}  // namespace detail

// Stratified test / train / validation split plus a stratified labelled
// subset of the training rows (at least one sample per class).
inline SplitPlan make_split(std::span<const std::size_t> y, std::size_t n_classes,
                            std::uint64_t seed, const SplitOptions& options = {}) {
  const auto in_unit = [](double f) { return f > 0.0 && f < 1.0; };
  if (!in_unit(options.test_fraction) || !in_unit(options.val_fraction_of_remainder)) {
    throw ConfigError("split fractions must lie in (0, 1)");
  }
  if (!(options.label_fraction > 0.0 && options.label_fraction <= 1.0)) {
    throw ConfigError("label_fraction must lie in (0, 1]");
  }
  for (std::size_t c : y)
    if (c >= n_classes) throw IndexError("label " + std::to_string(c) + " out of range");

  Rng rng(seed, "split");
  std::vector<std::size_t> all(y.size());
  std::iota(all.begin(), all.end(), 0);

  SplitPlan plan;
  plan.seed = seed;
  plan.label_fraction = options.label_fraction;

  auto groups = detail::GroupByClass(all, y, n_classes);
  std::vector<std::size_t> counts(n_classes);
  for (std::size_t c = 0; c < n_classes; ++c) counts[c] = groups[c].size();
  const auto alloc = detail::AllocateThreeWay(counts, options.test_fraction,
                                              options.val_fraction_of_remainder);
  for (std::size_t c = 0; c < n_classes; ++c) {
    auto& members = groups[c];
    rng.shuffle(std::span<std::size_t>(members));
    auto it = members.begin();
    plan.test_idx.insert(plan.test_idx.end(), it, it + long(alloc.test[c]));
    it += long(alloc.test[c]);
    plan.val_idx.insert(plan.val_idx.end(), it, it + long(alloc.val[c]));
    it += long(alloc.val[c]);
    plan.train_idx.insert(plan.train_idx.end(), it, members.end());
  }
  std::sort(plan.test_idx.begin(), plan.test_idx.end());
  std::sort(plan.val_idx.begin(), plan.val_idx.end());
  std::sort(plan.train_idx.begin(), plan.train_idx.end());
  detail::RequireEveryClass(plan.test_idx, y, n_classes, "test");
  detail::RequireEveryClass(plan.val_idx, y, n_classes, "validation");
  detail::RequireEveryClass(plan.train_idx, y, n_classes, "train");

  if (options.label_fraction >= 1.0) {
    plan.labelled_idx = plan.train_idx;
  } else {
    plan.labelled_idx = detail::StratifiedTwoWay(plan.train_idx, y, n_classes,
                                                 options.label_fraction, rng, 1)
                            .first;
  }
  return plan;
}

// Unlabelled training rows (train \ labelled) split 50:50, stratified, into
// Set 1 and Set 2. Odd class sizes put the extra sample in Set 2.
inline SplitPlan make_unmatched_split(const SplitPlan& plan, std::span<const std::size_t> y,
                                      std::size_t n_classes) {
  std::vector<std::size_t> labelled = plan.labelled_idx;
  std::sort(labelled.begin(), labelled.end());
  std::vector<std::size_t> unlabelled;
  std::set_difference(plan.train_idx.begin(), plan.train_idx.end(), labelled.begin(),
                      labelled.end(), std::back_inserter(unlabelled));
  Rng rng = Rng(plan.seed, "split").derive("unmatched");
  auto halves = detail::StratifiedTwoWay(unlabelled, y, n_classes, 0.5, rng);
  SplitPlan out = plan;
  out.set1_idx = std::move(halves.first);
  out.set2_idx = std::move(halves.second);
  return out;
}

}  // namespace mtr::data
