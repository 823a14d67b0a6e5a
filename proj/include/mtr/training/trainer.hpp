#pragma once

#include <chrono>
#include <cstdint>
#include <iomanip>
#include <limits>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "mtr/data/dataset.hpp"
#include "mtr/errors.hpp"
#include "mtr/log.hpp"
#include "mtr/model/duo.hpp"
#include "mtr/model/ftt.hpp"
#include "mtr/model/mlp.hpp"
#include "mtr/numerics/ops.hpp"
#include "mtr/objectives/losses.hpp"
#include "mtr/training/optimizer.hpp"

namespace mtr::training {

struct TrainConfig {
  double learning_rate = 1e-4;
  double weight_decay = 1e-5;
  std::size_t batch_size = 128;
  std::size_t pretrain_epochs = 200;
  std::size_t finetune_max_epochs = 200;
  std::size_t patience = 10;
  std::uint64_t seed = 0;
  bool symmetric_ntxent = false;
  // Progress lines go here when set.
  std::ostream* progress = nullptr;

  void validate() const {
    if (patience < 1) throw ConfigError("patience must be at least 1");
    if (pretrain_epochs < 1 || finetune_max_epochs < 1) throw ConfigError("epochs must be at least 1");
    if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
    if (batch_size < 1) throw ConfigError("batch_size must be at least 1");
  }

  AdamWConfig adamw() const { return {.learning_rate = learning_rate, .weight_decay = weight_decay}; }
};

struct TrainReport {
  std::vector<double> train_loss;
  std::vector<double> val_loss;
  std::size_t best_epoch = 0;     // 1-based; 0 when no validation was run
  std::size_t stopped_epoch = 0;  // number of epochs actually run
  double wall_seconds = 0.0;
  std::string checkpoint;
};

enum class PretrainMode { kMtr, kClip };

// Feature views for one set of rows: one matrix for unimodal models, two
// (paired by row) for a DuoFTT.
using Views = std::vector<data::Matrix>;

namespace detail {

template <Real T>
Tensor<T> GatherRows(const data::Matrix& X, std::span<const std::size_t> rows) {
  const std::size_t cols = static_cast<std::size_t>(X.cols());
  std::vector<T> v(rows.size() * cols);
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (std::size_t j = 0; j < cols; ++j) v[r * cols + j] = T(X(Eigen::Index(rows[r]), Eigen::Index(j)));
  return Tensor<T>({rows.size(), cols}, std::move(v));
}

inline std::vector<std::uint8_t> GatherMask(const data::MaskMatrix& mask, std::span<const std::size_t> rows) {
  std::vector<std::uint8_t> v;
  v.reserve(rows.size() * std::size_t(mask.cols()));
  for (std::size_t r : rows)
    for (Eigen::Index j = 0; j < mask.cols(); ++j) v.push_back(mask(Eigen::Index(r), j));
  return v;
}

// Shuffled mini-batches covering every row once. A trailing batch smaller
// than `min_size` is folded into the one before it.
inline std::vector<std::vector<std::size_t>> EpochBatches(std::size_t n, std::size_t batch_size, Rng& rng,
                                                          std::size_t min_size = 1) {
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  rng.shuffle(std::span<std::size_t>(order));
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t start = 0; start < n; start += batch_size)
    batches.emplace_back(order.begin() + long(start), order.begin() + long(std::min(n, start + batch_size)));
  if (batches.size() > 1 && batches.back().size() < min_size) {
    auto tail = std::move(batches.back());
    batches.pop_back();
    batches.back().insert(batches.back().end(), tail.begin(), tail.end());
  }
  return batches;
}

inline void Progress(const TrainConfig& cfg, std::size_t epoch, const char* phase, const char* split,
                     double loss) {
  if (!cfg.progress) return;
  *cfg.progress << "epoch=" << epoch << " phase=" << phase << " split=" << split
                << " loss=" << std::setprecision(9) << loss << '\n';
}

// Runs one differentiable step, tagging failures with where they happened.
template <Real T, class Loss>
double Step(AdamW<T>& opt, Loss&& make_loss, std::size_t epoch, std::size_t step) {
  try {
    Tensor<T> loss = make_loss();
    const double value = double(loss.item());
    if (!std::isfinite(value)) throw DivergenceError("non-finite loss", long(epoch), long(step));
    backward(loss);
    opt.step();
    return value;
  } catch (const DivergenceError& e) {
    if (e.epoch() >= 0) throw;
    throw DivergenceError(e.what(), long(epoch), long(step));
  } catch (const NumericError& e) {
    throw DivergenceError(e.what(), long(epoch), long(step));
  }
}

template <Real T>
Tensor<T> ForwardLogits(const model::FTTransformer<T>& m, const std::vector<Tensor<T>>& xs,
                        const std::vector<model::ForwardOptions>& opts) {
  return m.logits(xs.at(0), opts.at(0));
}

template <Real T>
Tensor<T> ForwardLogits(const model::Mlp<T>& m, const std::vector<Tensor<T>>& xs,
                        const std::vector<model::ForwardOptions>& opts) {
  return m.logits(xs.at(0), opts.at(0));
}

template <Real T>
Tensor<T> ForwardLogits(const model::DuoFTT<T>& m, const std::vector<Tensor<T>>& xs,
                        const std::vector<model::ForwardOptions>& opts) {
  return m.logits(xs.at(0), xs.at(1), opts.at(0), opts.at(1));
}

template <Real T>
std::vector<Tensor<T>> Gather(const Views& views, std::span<const std::size_t> rows) {
  std::vector<Tensor<T>> xs;
  for (const auto& X : views) xs.push_back(GatherRows<T>(X, rows));
  return xs;
}

inline void CheckViews(const Views& views, std::size_t expected, const char* what) {
  if (views.size() != expected) {
    throw ConfigError(std::string(what) + ": expected " + std::to_string(expected) + " feature view(s), got " +
                      std::to_string(views.size()));
  }
  for (const auto& X : views) {
    if (X.rows() != views.front().rows()) throw DimensionError(std::string(what) + ": views are not paired");
  }
}

template <class Model>
constexpr std::size_t ViewCount() {
  if constexpr (requires(const Model& m) { m.arm_a(); }) {
    return 2;
  } else {
    return 1;
  }
}

}  // namespace detail

// Contrastive MTR pretraining of a single FTT: each row's clean projection is
// the positive for its masked projection. Masks are redrawn every pass.
template <Real T>
TrainReport pretrain(model::FTTransformer<T>& m, const data::Matrix& X, const TrainConfig& cfg,
                     PretrainMode mode = PretrainMode::kMtr) {
  cfg.validate();
  if (mode == PretrainMode::kClip) throw ConfigError("CLIP pretraining needs a two-arm model");
  if (X.rows() < 2) throw ConfigError("pretraining needs at least two rows");
  if (!m.has_projection()) throw StateError("pretrain: model has no projection head");
  const double p_m = m.config().mask_rate;
  if (p_m == 0.0) {
    log::warn("pretrain: mask rate 0 makes every positive an exact duplicate of its anchor");
  }
  const auto start = std::chrono::steady_clock::now();
  AdamW<T> opt(m.parameters(), cfg.adamw());
  Rng batch_rng(cfg.seed, "batch");
  Rng aug_rng(cfg.seed, "mtr");
  const objectives::ContrastiveOptions loss_opt{m.config().temperature, cfg.symmetric_ntxent};
  TrainReport report;
  std::size_t step = 0;
  for (std::size_t epoch = 1; epoch <= cfg.pretrain_epochs; ++epoch) {
    double total = 0;
    std::size_t count = 0;
    for (const auto& rows : detail::EpochBatches(std::size_t(X.rows()), cfg.batch_size, batch_rng, 2)) {
      const auto x = detail::GatherRows<T>(X, rows);
      const double loss = detail::Step(opt, [&] {
        model::ForwardOptions clean{.training = true, .rng = &aug_rng};
        model::ForwardOptions masked{.training = true, .mask_rate = p_m, .rng = &aug_rng};
        auto z = m.project(m.latent(x, clean));
        auto zm = m.project(m.latent(x, masked));
        return objectives::ntxent(z, zm, loss_opt);
      }, epoch, ++step);
      total += loss;
      count += rows.size();
    }
    report.train_loss.push_back(total / double(count));
    detail::Progress(cfg, epoch, "pretrain", "train", report.train_loss.back());
  }
  report.stopped_epoch = cfg.pretrain_epochs;
  report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

// Pretraining of both arms on paired rows. MTR: NTXent between the fused
// clean and fused masked projections. CLIP: the two arms' unmasked
// projections of the same row are the positive pair.
template <Real T>
TrainReport pretrain(model::DuoFTT<T>& duo, const data::Matrix& X_a, const data::Matrix& X_b,
                     const TrainConfig& cfg, PretrainMode mode) {
  cfg.validate();
  if (X_a.rows() != X_b.rows()) throw DimensionError("pretrain: modality row counts differ");
  if (X_a.rows() < 2) throw ConfigError("pretraining needs at least two rows");
  const double p_m = duo.arm_a().config().mask_rate;
  if (mode == PretrainMode::kMtr && p_m == 0.0) {
    log::warn("pretrain: mask rate 0 makes every positive an exact duplicate of its anchor");
  }
  const auto start = std::chrono::steady_clock::now();
  AdamW<T> opt(duo.parameters(), cfg.adamw());
  Rng batch_rng(cfg.seed, "batch");
  Rng aug_rng(cfg.seed, "mtr");
  const objectives::ContrastiveOptions loss_opt{duo.arm_a().config().temperature, cfg.symmetric_ntxent};
  TrainReport report;
  std::size_t step = 0;
  for (std::size_t epoch = 1; epoch <= cfg.pretrain_epochs; ++epoch) {
    double total = 0;
    std::size_t count = 0;
    for (const auto& rows : detail::EpochBatches(std::size_t(X_a.rows()), cfg.batch_size, batch_rng, 2)) {
      const auto xa = detail::GatherRows<T>(X_a, rows);
      const auto xb = detail::GatherRows<T>(X_b, rows);
      const double loss = detail::Step(opt, [&] {
        if (mode == PretrainMode::kClip) {
          auto [u, v] = duo.arm_projections(xa, xb, true, &aug_rng);
          return objectives::clip_loss(u, v, loss_opt);
        }
        auto views = duo.pretrain_forward(xa, xb, p_m, &aug_rng);
        return objectives::ntxent(views.clean, views.masked, loss_opt);
      }, epoch, ++step);
      total += loss;
      count += rows.size();
    }
    report.train_loss.push_back(total / double(count));
    detail::Progress(cfg, epoch, "pretrain", "train", report.train_loss.back());
  }
  report.stopped_epoch = cfg.pretrain_epochs;
  report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

// Unmatched pretraining: each arm is pretrained on its own modality's rows
// (Set 1 for arm A, Set 2 for arm B) and then serves inside the duo.
template <Real T>
std::pair<TrainReport, TrainReport> pretrain_unmatched(model::DuoFTT<T>& duo, const data::Matrix& set1_a,
                                                       const data::Matrix& set2_b, const TrainConfig& cfg) {
  if (set1_a.rows() == 0 || set2_b.rows() == 0) {
    throw ConfigError("unmatched pretraining needs non-empty Set 1 and Set 2");
  }
  auto ra = pretrain(duo.arm_a(), set1_a, cfg);
  auto rb = pretrain(duo.arm_b(), set2_b, cfg);
  return {std::move(ra), std::move(rb)};
}

// Patience rule on a stream of validation losses. observe() returns true
// when training should stop.
class EarlyStopping {
 public:
  explicit EarlyStopping(std::size_t patience) : patience_(patience) {
    if (patience < 1) throw ConfigError("patience must be at least 1");
  }

  bool observe(double loss) {
    ++epoch_;
    improved_ = loss < best_;
    if (improved_) {
      best_ = loss;
      best_epoch_ = epoch_;
      since_best_ = 0;
      return false;
    }
    return ++since_best_ >= patience_;
  }

  bool improved() const { return improved_; }
  double best() const { return best_; }
  std::size_t best_epoch() const { return best_epoch_; }

 private:
  std::size_t patience_;
  std::size_t epoch_ = 0, best_epoch_ = 0, since_best_ = 0;
  double best_ = std::numeric_limits<double>::infinity();
  bool improved_ = false;
};

struct FinetuneOptions {
  // MTR masking of training batches (never validation).
  std::optional<double> augment_p_m;
};

template <Real T, class Model>
double ValidationLoss(const Model& m, const Views& X, std::span<const std::size_t> y, std::size_t batch_size) {
  NoGradGuard no_grad;
  double total = 0;
  std::vector<std::size_t> rows;
  for (std::size_t start = 0; start < y.size(); start += batch_size) {
    rows.clear();
    for (std::size_t i = start; i < std::min(y.size(), start + batch_size); ++i) rows.push_back(i);
    const auto xs = detail::Gather<T>(X, rows);
    std::vector<model::ForwardOptions> opts(xs.size());
    auto logits = detail::ForwardLogits(m, xs, opts);
    auto loss = objectives::cross_entropy(logits, y.subspan(start, rows.size()));
    total += double(loss.item()) * double(rows.size());
  }
  return total / double(y.size());
}

// Supervised finetuning with early stopping on validation cross-entropy.
// After `patience` consecutive epochs without a new best, training stops and
// the best epoch's parameter values are written back into the same tensors.
template <Real T, class Model>
TrainReport finetune(Model& m, const Views& X_train, std::span<const std::size_t> y_train, const Views& X_val,
                     std::span<const std::size_t> y_val, const TrainConfig& cfg, const FinetuneOptions& fopt = {}) {
  cfg.validate();
  constexpr std::size_t kViews = detail::ViewCount<Model>();
  if (y_train.empty()) throw ConfigError("finetune: no labelled training rows");
  if (y_val.empty()) throw ConfigError("finetune: empty validation set");
  detail::CheckViews(X_train, kViews, "finetune");
  detail::CheckViews(X_val, kViews, "finetune");
  if (std::size_t(X_train.front().rows()) != y_train.size() || std::size_t(X_val.front().rows()) != y_val.size()) {
    throw DimensionError("finetune: feature rows and labels differ in length");
  }
  {
    std::vector<bool> seen(1, false);
    for (auto c : y_train) {
      if (c >= seen.size()) seen.resize(c + 1, false);
      seen[c] = true;
    }
    std::vector<bool> in_val(seen.size(), false);
    for (auto c : y_val)
      if (c < in_val.size()) in_val[c] = true;
    for (std::size_t c = 0; c < seen.size(); ++c)
      if (seen[c] && !in_val[c]) log::warn("finetune: validation set has no samples of class " + std::to_string(c));
  }
  const auto start = std::chrono::steady_clock::now();
  const auto params = m.parameters();
  AdamW<T> opt(params, cfg.adamw());
  Rng batch_rng(cfg.seed, "finetune_batch");
  Rng aug_rng(cfg.seed, "finetune_mtr");
  const double p_m = fopt.augment_p_m.value_or(0.0);

  TrainReport report;
  EarlyStopping stopper(cfg.patience);
  std::vector<std::vector<T>> best_values;
  std::size_t step = 0;
  for (std::size_t epoch = 1; epoch <= cfg.finetune_max_epochs; ++epoch) {
    double total = 0;
    for (const auto& rows : detail::EpochBatches(y_train.size(), cfg.batch_size, batch_rng)) {
      const auto xs = detail::Gather<T>(X_train, rows);
      std::vector<std::size_t> targets;
      for (auto r : rows) targets.push_back(y_train[r]);
      total += double(rows.size()) * detail::Step(opt, [&] {
        std::vector<model::ForwardOptions> opts(
            xs.size(), model::ForwardOptions{.training = true, .mask_rate = p_m, .rng = &aug_rng});
        return objectives::cross_entropy(detail::ForwardLogits(m, xs, opts), targets);
      }, epoch, ++step);
    }
    report.train_loss.push_back(total / double(y_train.size()));
    detail::Progress(cfg, epoch, "finetune", "train", report.train_loss.back());
    const double val = ValidationLoss<T>(m, X_val, y_val, std::max<std::size_t>(cfg.batch_size, 256));
    if (!std::isfinite(val)) throw DivergenceError("non-finite validation loss", long(epoch), long(step));
    report.val_loss.push_back(val);
    detail::Progress(cfg, epoch, "finetune", "val", val);
    report.stopped_epoch = epoch;
    const bool stop = stopper.observe(val);
    if (stopper.improved()) {
      report.best_epoch = epoch;
      best_values.clear();
      for (const auto& [name, t] : params) best_values.emplace_back(t.values().begin(), t.values().end());
    }
    if (stop) break;
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto dst = params[i].second.mutable_values();
    std::copy(best_values[i].begin(), best_values[i].end(), dst.begin());
  }
  report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

struct PredictOptions {
  // Per-view cells to replace with the mask token (mask-token imputation).
  std::vector<const data::MaskMatrix*> forced_masks;
  std::size_t batch_size = 256;
};

// Class probabilities [n x C] in eval mode.
template <Real T, class Model>
data::Matrix predict_proba(const Model& m, const Views& X, const PredictOptions& popt = {}) {
  NoGradGuard no_grad;
  constexpr std::size_t kViews = detail::ViewCount<Model>();
  detail::CheckViews(X, kViews, "predict");
  const std::size_t n = std::size_t(X.front().rows());
  data::Matrix out;
  std::vector<std::size_t> rows;
  for (std::size_t start = 0; start < n; start += popt.batch_size) {
    rows.clear();
    for (std::size_t i = start; i < std::min(n, start + popt.batch_size); ++i) rows.push_back(i);
    const auto xs = detail::Gather<T>(X, rows);
    std::vector<std::vector<std::uint8_t>> masks(kViews);
    std::vector<model::ForwardOptions> opts(kViews);
    for (std::size_t v = 0; v < kViews; ++v) {
      if (v < popt.forced_masks.size() && popt.forced_masks[v]) {
        masks[v] = detail::GatherMask(*popt.forced_masks[v], rows);
        opts[v].forced_mask = masks[v];
      }
    }
    auto probs = ops::softmax(detail::ForwardLogits(m, xs, opts));
    const std::size_t C = probs.dim(1);
    if (out.size() == 0) out.resize(Eigen::Index(n), Eigen::Index(C));
    for (std::size_t r = 0; r < rows.size(); ++r)
      for (std::size_t c = 0; c < C; ++c) out(Eigen::Index(start + r), Eigen::Index(c)) = double(probs.value(r * C + c));
  }
  return out;
}

}  // namespace mtr::training
