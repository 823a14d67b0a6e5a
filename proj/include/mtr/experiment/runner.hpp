#pragma once

#include <algorithm>
#include <cstdio>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <ostream>
#include <string>
#include <thread>
#include <vector>

#include "mtr/data/dataset.hpp"
#include "mtr/data/missing.hpp"
#include "mtr/data/preprocess.hpp"
#include "mtr/data/split.hpp"
#include "mtr/data/synthetic.hpp"
#include "mtr/experiment/config.hpp"
#include "mtr/metrics/metrics.hpp"
#include "mtr/model/duo.hpp"
#include "mtr/model/ftt.hpp"
#include "mtr/model/mlp.hpp"
#include "mtr/training/trainer.hpp"

namespace mtr::experiment {

// One (x, y) point of a sweep, long format.
struct SweepPoint {
  std::string sweep;
  double x = 0;
  double y = 0;
  std::string series;
  std::uint64_t seed = 0;
};

// Training summary kept next to each result row.
struct TrainingRecord {
  std::string model;
  std::uint64_t seed = 0;
  std::size_t best_epoch = 0;
  std::size_t stopped_epoch = 0;
  double best_val_loss = 0;
  double wall_seconds = 0;
};

struct HpoTrial {
  std::uint64_t seed = 0;
  std::size_t trial = 0;
  Json params;
  double val_loss = 0;
  std::size_t best_epoch = 0;
};

struct ExperimentResult {
  std::string experiment;
  std::vector<metrics::ResultRow> rows;
  std::vector<TrainingRecord> training;
  std::vector<SweepPoint> points;
  std::vector<HpoTrial> trials;
  std::vector<Json> best_configs;  // hpo, one per seed
};

// Short numeric label for model names, e.g. "ftt_mtr[p_m=0.45]".
inline std::string Tag(const std::string& base, const char* key, double value) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%s[%s=%g]", base.c_str(), key, value);
  return buf;
}

// ---------------------------------------------------------------------------
// Data

struct LoadedData {
  data::TabularDataset a;
  std::optional<data::TabularDataset> b;
  Json key;  // identifies the source for caching
};

inline void RequireTaskSize(const data::TabularDataset& ds) {
  const std::size_t C = ds.n_classes();
  if (C < 2) throw TaskError("dataset has fewer than two classes");
  if (ds.n_samples() < 10 * C) {
    throw TaskError("dataset too small: " + std::to_string(ds.n_samples()) + " samples for " + std::to_string(C) +
                    " classes (need at least " + std::to_string(10 * C) + ")");
  }
}

inline LoadedData load_data(const ExperimentConfig& cfg) {
  LoadedData out;
  if (cfg.synthetic) {
    const auto& s = *cfg.synthetic;
    out.key = Json{{"synthetic", s}};
    if (s.kind == "bimodal_blobs") {
      auto paired = data::make_bimodal_blobs(s.spec, s.n_features_b ? s.n_features_b : s.spec.n_features);
      out.a = std::move(paired.a);
      out.b = std::move(paired.b);
    } else {
      out.a = data::make_blobs(s.spec);
    }
  } else {
    out.key = Json{{"datasets", cfg.datasets}, {"label_column", cfg.label_column}};
    out.a = data::load_table(cfg.datasets[0], cfg.label_column);
    if (cfg.datasets.size() == 2) {
      auto paired = data::join_on_ids(out.a, data::load_table(cfg.datasets[1], cfg.label_column));
      out.a = std::move(paired.a);
      out.b = std::move(paired.b);
    }
  }
  if (cfg.min_class_count > 0) {
    out.key["min_class_count"] = cfg.min_class_count;
    if (out.b) {
      // Filter on the shared labels, then keep both halves row-aligned.
      std::vector<std::size_t> counts(out.a.n_classes(), 0);
      for (auto c : out.a.y) ++counts[c];
      std::vector<std::size_t> rows;
      for (std::size_t i = 0; i < out.a.n_samples(); ++i)
        if (counts[out.a.y[i]] >= cfg.min_class_count) rows.push_back(i);
      auto a = data::filter_min_class(out.a, cfg.min_class_count);
      auto b = out.b->subset(rows);
      b.y = a.y;
      b.class_names = a.class_names;
      out.a = std::move(a);
      out.b = std::move(b);
    } else {
      out.a = data::filter_min_class(out.a, cfg.min_class_count);
    }
  }
  RequireTaskSize(out.a);
  if (!is_duo(cfg.kind)) out.b.reset();
  return out;
}

inline data::Matrix Take(const data::Matrix& X, std::span<const std::size_t> rows) {
  data::Matrix out(Eigen::Index(rows.size()), X.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(Eigen::Index(i)) = X.row(Eigen::Index(rows[i]));
  return out;
}

inline std::vector<std::size_t> Take(std::span<const std::size_t> y, std::span<const std::size_t> rows) {
  std::vector<std::size_t> out;
  out.reserve(rows.size());
  for (auto r : rows) out.push_back(y[r]);
  return out;
}

// One modality of one seed: every row passed through a preprocessor fitted on
// the training rows only.
struct Fold {
  data::Matrix all;
  data::FeatureStats train_stats;
  std::size_t dim = 0;

  static Fold make(const data::TabularDataset& ds, const data::SplitPlan& plan, std::size_t pca) {
    Fold f;
    const auto pre = data::Preprocessor::fit(Take(ds.X, plan.train_idx), pca);
    f.all = pre.apply(ds.X);
    f.train_stats = data::FeatureStats::fit(Take(f.all, plan.train_idx));
    f.dim = pre.output_dim();
    return f;
  }

  data::Matrix rows(std::span<const std::size_t> idx) const { return Take(all, idx); }
};

// ---------------------------------------------------------------------------
// Errors raised inside a seed are re-thrown with the seed and stage prefixed,
// keeping their category (and so the CLI exit code).

template <class F>
decltype(auto) Stage(std::uint64_t seed, std::string_view stage, F&& f) {
  const std::string where = "seed " + std::to_string(seed) + ", " + std::string(stage) + ": ";
  try {
    return f();
  } catch (const DivergenceError& e) {
    throw DivergenceError(where + e.what());
  } catch (const NumericError& e) {
    throw NumericError(where + e.what());
  } catch (const TaskError& e) {
    throw TaskError(where + e.what());
  } catch (const DataError& e) {
    throw DataError(where + e.what());
  } catch (const ConfigError& e) {
    throw ConfigError(where + e.what());
  } catch (const DimensionError& e) {
    throw DimensionError(where + e.what());
  } catch (const StateError& e) {
    throw StateError(where + e.what());
  } catch (const UsageError& e) {
    throw UsageError(where + e.what());
  }
}

// ---------------------------------------------------------------------------
// Runs that several experiments share (the same pretraining for a mask-rate
// sweep point and the unimodal run, pretraining reused across label
// fractions) are memoised by a key describing everything they depend on.

template <Real T>
class RunCache {
 public:
  std::optional<model::FTTransformer<T>> ftt(const std::string& key) const {
    std::lock_guard lock(mu_);
    auto it = ftt_.find(key);
    if (it == ftt_.end()) return std::nullopt;
    return it->second.clone();
  }
  void put(const std::string& key, const model::FTTransformer<T>& m) {
    std::lock_guard lock(mu_);
    ftt_.insert_or_assign(key, m.clone());
  }

  std::optional<model::DuoFTT<T>> duo(const std::string& key) const {
    std::lock_guard lock(mu_);
    auto it = duo_.find(key);
    if (it == duo_.end()) return std::nullopt;
    return it->second.clone();
  }
  void put(const std::string& key, const model::DuoFTT<T>& m) {
    std::lock_guard lock(mu_);
    duo_.insert_or_assign(key, m.clone());
  }

  struct Outcome {
    metrics::MetricsReport metrics;
    TrainingRecord training;
  };
  std::optional<Outcome> outcome(const std::string& key) const {
    std::lock_guard lock(mu_);
    auto it = outcomes_.find(key);
    if (it == outcomes_.end()) return std::nullopt;
    return it->second;
  }
  void put(const std::string& key, const Outcome& o) {
    std::lock_guard lock(mu_);
    outcomes_.insert_or_assign(key, o);
  }

 private:
  mutable std::mutex mu_;
  std::map<std::string, model::FTTransformer<T>> ftt_;
  std::map<std::string, model::DuoFTT<T>> duo_;
  std::map<std::string, Outcome> outcomes_;
};

template <Real T>
struct RunOptions {
  std::ostream* progress = nullptr;
  RunCache<T>* cache = nullptr;
  std::size_t threads = 1;
};

// Runs fn(i) for every seed index on up to `threads` workers. Results are
// merged by the caller in seed order, so output does not depend on timing.
inline void ForEachSeed(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& fn) {
  threads = std::max<std::size_t>(1, std::min(threads, n));
  if (threads == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::exception_ptr> errors(n);
  std::mutex mu;
  std::size_t next = 0;
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < threads; ++t) {
    pool.emplace_back([&] {
      for (;;) {
        std::size_t i;
        {
          std::lock_guard lock(mu);
          if (next == n) return;
          i = next++;
        }
        try {
          fn(i);
        } catch (...) {
          errors[i] = std::current_exception();
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

// ---------------------------------------------------------------------------
// Building blocks

template <Real T>
class Session {
 public:
  Session(const ExperimentConfig& cfg, const LoadedData& data, const RunOptions<T>& opt)
      : cfg_(cfg), data_(data), opt_(opt) {
    if (!opt_.cache) {
      own_cache_ = std::make_unique<RunCache<T>>();
      opt_.cache = own_cache_.get();
    }
  }

  const ExperimentConfig& config() const { return cfg_; }
  std::size_t n_classes() const { return data_.a.n_classes(); }

  training::TrainConfig train_config(std::uint64_t seed) const {
    auto t = cfg_.train;
    t.seed = seed;
    t.progress = opt_.progress;
    return t;
  }

  model::FTTConfig ftt_config(std::size_t n_features, bool arm_b = false) const {
    auto m = arm_b && cfg_.model_b ? *cfg_.model_b : cfg_.model;
    m.n_features = n_features;
    m.n_classes = n_classes();
    m.validate();
    return m;
  }

  data::SplitPlan split(std::uint64_t seed, double label_fraction) const {
    return data::make_split(data_.a.y, n_classes(), seed,
                            {.test_fraction = 0.2, .val_fraction_of_remainder = 0.1,
                             .label_fraction = label_fraction});
  }

  // Cache key: data source, preprocessing, seed and whatever else the caller adds.
  std::string key(std::uint64_t seed, Json extra) const {
    extra["data"] = data_.key;
    extra["pca"] = cfg_.pca_components;
    extra["seed"] = seed;
    extra["precision"] = sizeof(T);
    return extra.dump();
  }

  static Json pretrain_fields(const training::TrainConfig& t) {
    return Json{{"lr", t.learning_rate}, {"wd", t.weight_decay}, {"bs", t.batch_size},
                {"epochs", t.pretrain_epochs}, {"sym", t.symmetric_ntxent}};
  }
  static Json finetune_fields(const training::TrainConfig& t) {
    return Json{{"lr", t.learning_rate}, {"wd", t.weight_decay}, {"bs", t.batch_size},
                {"epochs", t.finetune_max_epochs}, {"patience", t.patience}};
  }

  // FTT, pretrained with MTR on `X` when `pretrain` is set.
  model::FTTransformer<T> ftt(const model::FTTConfig& mc, const data::Matrix& X, std::uint64_t seed, bool pretrain,
                              const std::string& tag) {
    const auto tc = train_config(seed);
    const std::string k = key(seed, {{"ftt", tag}, {"model", mc}, {"pretrain", pretrain ? pretrain_fields(tc) : Json()}});
    if (auto hit = opt_.cache->ftt(k)) return std::move(*hit);
    Rng init(seed, "init");
    model::FTTransformer<T> m(mc, init);
    if (pretrain) Stage(seed, "pretrain " + tag, [&] { return training::pretrain(m, X, tc); });
    opt_.cache->put(k, m);
    return m;
  }

  enum class DuoPretrain { kNone, kMtr, kClip, kUnmatched };

  model::DuoFTT<T> duo(const model::FTTConfig& ca, const model::FTTConfig& cb, const data::Matrix& A,
                       const data::Matrix& B, const data::Matrix& set1_a, const data::Matrix& set2_b,
                       std::uint64_t seed, DuoPretrain how) {
    const auto tc = train_config(seed);
    const std::string k = key(seed, {{"duo", int(how)}, {"a", ca}, {"b", cb}, {"lf", how == DuoPretrain::kUnmatched ? cfg_.label_fraction : 0.0},
                                     {"pretrain", how == DuoPretrain::kNone ? Json() : pretrain_fields(tc)}});
    if (auto hit = opt_.cache->duo(k)) return std::move(*hit);
    Rng init(seed, "init");
    auto d = model::DuoFTT<T>::init(ca, cb, init);
    Stage(seed, "duo pretrain", [&] {
      switch (how) {
        case DuoPretrain::kNone: break;
        case DuoPretrain::kMtr: training::pretrain(d, A, B, tc, training::PretrainMode::kMtr); break;
        case DuoPretrain::kClip: training::pretrain(d, A, B, tc, training::PretrainMode::kClip); break;
        case DuoPretrain::kUnmatched: training::pretrain_unmatched(d, set1_a, set2_b, tc); break;
      }
      return 0;
    });
    opt_.cache->put(k, d);
    return d;
  }

  // Finetunes `m` on the labelled rows, evaluates on test. `test_opts`
  // carries forced masks for mask-token imputation.
  template <class Model>
  typename RunCache<T>::Outcome finetune_eval(Model& m, const std::string& name, std::uint64_t seed,
                                              const training::Views& train, std::span<const std::size_t> y_train,
                                              const training::Views& val, std::span<const std::size_t> y_val,
                                              const training::Views& test, std::span<const std::size_t> y_test,
                                              const training::FinetuneOptions& fopt = {},
                                              const training::PredictOptions& popt = {},
                                              std::optional<training::TrainConfig> override_tc = {}) {
    const auto tc = override_tc.value_or(train_config(seed));
    const auto report = Stage(seed, "finetune " + name,
                              [&] { return training::finetune<T>(m, train, y_train, val, y_val, tc, fopt); });
    const auto probs = Stage(seed, "evaluate " + name, [&] { return training::predict_proba<T>(m, test, popt); });
    typename RunCache<T>::Outcome o;
    o.metrics = metrics::evaluate(y_test, probs, seed);
    o.training = {name, seed, report.best_epoch, report.stopped_epoch, report.val_loss[report.best_epoch - 1],
                  report.wall_seconds};
    return o;
  }

  RunCache<T>& cache() { return *opt_.cache; }
  std::size_t threads() const { return opt_.threads; }

 private:
  const ExperimentConfig& cfg_;
  const LoadedData& data_;
  RunOptions<T> opt_;
  std::unique_ptr<RunCache<T>> own_cache_;
};

// Per-seed partial results, merged in seed order.
struct Partial {
  std::vector<metrics::ResultRow> rows;
  std::vector<TrainingRecord> training;
  std::vector<SweepPoint> points;
  std::vector<HpoTrial> trials;
  std::vector<Json> best_configs;

  template <class Outcome>
  void add(const std::string& experiment, const std::string& model, std::uint64_t seed, Outcome o) {
    o.training.model = model;
    rows.push_back({experiment, model, seed, o.metrics});
    training.push_back(o.training);
  }
};

inline ExperimentResult Merge(std::string experiment, std::vector<Partial>& parts) {
  ExperimentResult r;
  r.experiment = std::move(experiment);
  for (auto& p : parts) {
    r.rows.insert(r.rows.end(), p.rows.begin(), p.rows.end());
    r.training.insert(r.training.end(), p.training.begin(), p.training.end());
    r.points.insert(r.points.end(), p.points.begin(), p.points.end());
    r.trials.insert(r.trials.end(), p.trials.begin(), p.trials.end());
    r.best_configs.insert(r.best_configs.end(), p.best_configs.begin(), p.best_configs.end());
  }
  return r;
}

// Labelled, validation and test views of one modality.
struct UniViews {
  data::Matrix pretrain, labelled, val, test;
  std::vector<std::size_t> y_labelled, y_val, y_test;
};

inline UniViews MakeViews(const Fold& f, const data::SplitPlan& plan, std::span<const std::size_t> y) {
  return {f.rows(plan.train_idx), f.rows(plan.labelled_idx), f.rows(plan.val_idx), f.rows(plan.test_idx),
          Take(y, plan.labelled_idx), Take(y, plan.val_idx), Take(y, plan.test_idx)};
}

template <Real T>
typename RunCache<T>::Outcome UnimodalVariant(Session<T>& s, const UniViews& v, std::size_t dim,
                                              std::uint64_t seed, bool pretrain, double mask_rate,
                                              double label_fraction, const std::string& tag = "uni") {
  auto mc = s.ftt_config(dim);
  mc.mask_rate = mask_rate;
  const auto tc = s.train_config(seed);
  const std::string k =
      s.key(seed, {{"outcome", tag}, {"model", mc}, {"pretrain", pretrain ? Session<T>::pretrain_fields(tc) : Json()},
                   {"finetune", Session<T>::finetune_fields(tc)}, {"lf", label_fraction}});
  if (auto hit = s.cache().outcome(k)) return *hit;
  auto m = s.ftt(mc, v.pretrain, seed, pretrain, tag);
  Rng head = Rng(seed, "init").derive("head");
  m.attach_classifier(head);
  auto o = s.finetune_eval(m, pretrain ? "ftt_mtr" : "ftt", seed, {v.labelled}, v.y_labelled, {v.val}, v.y_val,
                           {v.test}, v.y_test);
  s.cache().put(k, o);
  return o;
}

// MLP finetuning uses its own epochs, batch size and learning rate.
template <Real T>
typename RunCache<T>::Outcome MlpVariant(Session<T>& s, model::MlpConfig mc, const UniViews& v, std::size_t dim,
                                         std::uint64_t seed) {
  mc.n_features = dim;
  mc.n_classes = s.n_classes();
  mc.validate();
  Rng init(seed, "init");
  model::Mlp<T> m(mc, init);
  auto tc = s.train_config(seed);
  tc.learning_rate = mc.learning_rate;
  tc.batch_size = mc.batch_size;
  tc.finetune_max_epochs = mc.epochs;
  return s.finetune_eval(m, "mlp", seed, {v.labelled}, v.y_labelled, {v.val}, v.y_val, {v.test}, v.y_test, {}, {},
                         tc);
}

// ---------------------------------------------------------------------------
// Experiments

template <Real T>
ExperimentResult run_unimodal(const ExperimentConfig& cfg, const RunOptions<T>& opt = {}) {
  cfg.validate();
  const auto data = load_data(cfg);
  Session<T> s(cfg, data, opt);
  std::vector<Partial> parts(cfg.seeds.size());
  ForEachSeed(cfg.seeds.size(), s.threads(), [&](std::size_t i) {
    const auto seed = cfg.seeds[i];
    const auto plan = Stage(seed, "split", [&] { return s.split(seed, cfg.label_fraction); });
    const auto fold = Fold::make(data.a, plan, cfg.pca_components);
    const auto v = MakeViews(fold, plan, data.a.y);
    parts[i].add("unimodal", "ftt", seed, UnimodalVariant(s, v, fold.dim, seed, false, cfg.model.mask_rate, cfg.label_fraction));
    parts[i].add("unimodal", "ftt_mtr", seed, UnimodalVariant(s, v, fold.dim, seed, true, cfg.model.mask_rate, cfg.label_fraction));
    if (cfg.mlp) parts[i].add("unimodal", "mlp", seed, MlpVariant(s, *cfg.mlp, v, fold.dim, seed));
  });
  return Merge("unimodal", parts);
}

template <Real T>
ExperimentResult run_mask_rate_sweep(const ExperimentConfig& cfg, const RunOptions<T>& opt = {}) {
  cfg.validate();
  const auto data = load_data(cfg);
  Session<T> s(cfg, data, opt);
  std::vector<Partial> parts(cfg.seeds.size());
  ForEachSeed(cfg.seeds.size(), s.threads(), [&](std::size_t i) {
    const auto seed = cfg.seeds[i];
    const auto plan = Stage(seed, "split", [&] { return s.split(seed, cfg.label_fraction); });
    const auto fold = Fold::make(data.a, plan, cfg.pca_components);
    const auto v = MakeViews(fold, plan, data.a.y);
    for (double rate : cfg.mask_rates) {
      const auto o = UnimodalVariant(s, v, fold.dim, seed, true, rate, cfg.label_fraction);
      parts[i].add("mask_rate_sweep", Tag("ftt_mtr", "p_m", rate), seed, o);
      parts[i].points.push_back({"mask_rate", rate, o.metrics.accuracy, "ftt_mtr", seed});
    }
  });
  return Merge("mask_rate_sweep", parts);
}

template <Real T>
ExperimentResult run_label_fraction_sweep(const ExperimentConfig& cfg, const RunOptions<T>& opt = {}) {
  cfg.validate();
  const auto data = load_data(cfg);
  Session<T> s(cfg, data, opt);
  std::vector<Partial> parts(cfg.seeds.size());
  ForEachSeed(cfg.seeds.size(), s.threads(), [&](std::size_t i) {
    const auto seed = cfg.seeds[i];
    for (double f : cfg.label_fractions) {
      const auto plan = Stage(seed, "split", [&] { return s.split(seed, f); });
      const auto fold = Fold::make(data.a, plan, cfg.pca_components);
      const auto v = MakeViews(fold, plan, data.a.y);
      for (bool pretrain : {false, true}) {
        const std::string name = pretrain ? "ftt_mtr" : "ftt";
        const auto o = UnimodalVariant(s, v, fold.dim, seed, pretrain, cfg.model.mask_rate, f);
        parts[i].add("label_fraction_sweep", Tag(name, "labels", f), seed, o);
        parts[i].points.push_back({"label_fraction", f, o.metrics.accuracy, name, seed});
      }
    }
  });
  return Merge("label_fraction_sweep", parts);
}

// Mean-imputation FTT, minimum-imputation FTT, MTR-augmented FTT with
// mask-token imputation, and pretrained + MTR-augmented FTT, evaluated on test
// sets with synthesized missingness.
template <Real T>
ExperimentResult run_missingness(const ExperimentConfig& cfg, const RunOptions<T>& opt = {}) {
  cfg.validate();
  const auto data = load_data(cfg);
  Session<T> s(cfg, data, opt);
  const auto& mp = cfg.missingness;
  std::vector<Partial> parts(cfg.seeds.size());
  ForEachSeed(cfg.seeds.size(), s.threads(), [&](std::size_t i) {
    const auto seed = cfg.seeds[i];
    const auto plan = Stage(seed, "split", [&] { return s.split(seed, cfg.label_fraction); });
    const auto fold = Fold::make(data.a, plan, 0);
    const auto v = MakeViews(fold, plan, data.a.y);
    const auto mc = s.ftt_config(fold.dim);

    struct Candidate {
      std::string name;
      model::FTTransformer<T> model;
      data::ImputeStrategy strategy;
    };
    const auto train = [&](const std::string& name, bool pretrain, std::optional<double> augment) {
      auto m = s.ftt(mc, v.pretrain, seed, pretrain, "missingness");
      Rng head = Rng(seed, "init").derive("head");
      m.attach_classifier(head);
      Stage(seed, "finetune " + name, [&] {
        return training::finetune<T>(m, {v.labelled}, v.y_labelled, {v.val}, v.y_val, s.train_config(seed),
                                     {.augment_p_m = augment});
      });
      return m;
    };
    const auto evaluate = [&](const model::FTTransformer<T>& m, data::ImputeStrategy strategy, double p_missing) {
      const auto miss = data::synthesize_missing(v.test, {.p_incomplete = mp.p_incomplete, .p_missing = p_missing, .seed = seed});
      const auto X = data::impute(miss.X, miss.mask, strategy, fold.train_stats);
      training::PredictOptions popt;
      if (strategy == data::ImputeStrategy::kMaskToken) popt.forced_masks = {&miss.mask};
      return metrics::evaluate(v.y_test, training::predict_proba<T>(m, {X}, popt), seed);
    };

    auto plain = train("ftt_plain", false, std::nullopt);
    std::vector<Candidate> candidates;
    candidates.push_back({"mean_imputation", plain.clone(), data::ImputeStrategy::kMean});
    candidates.push_back({"minimum_imputation", std::move(plain), data::ImputeStrategy::kMinimum});
    candidates.push_back({"mtr_mask_token", train("mtr_aug", false, mp.augment_p_m), data::ImputeStrategy::kMaskToken});
    if (mp.include_pretrained) {
      candidates.push_back(
          {"pretrained_mtr_mask_token", train("pretrained_mtr_aug", true, mp.augment_p_m), data::ImputeStrategy::kMaskToken});
    }
    for (double p_missing : mp.p_missing_grid) {
      for (const auto& c : candidates) {
        const auto report = evaluate(c.model, c.strategy, p_missing);
        parts[i].rows.push_back({"missingness", Tag(c.name, "p_M", p_missing), seed, report});
        parts[i].points.push_back({"p_missing", p_missing, report.accuracy, c.name, seed});
      }
    }
    for (double rate : mp.train_mask_rates) {
      const auto m = train(Tag("mtr_aug", "p_m", rate), false, rate);
      const auto report = evaluate(m, data::ImputeStrategy::kMaskToken, mp.sweep_p_missing);
      parts[i].rows.push_back({"missingness", Tag("mtr_mask_token_train", "p_m", rate), seed, report});
      parts[i].points.push_back({"train_mask_rate", rate, report.accuracy, "mtr_mask_token", seed});
    }
  });
  return Merge("missingness", parts);
}

template <Real T>
ExperimentResult run_duo(const ExperimentConfig& cfg, Kind mode, const RunOptions<T>& opt = {}) {
  auto local = cfg;
  local.kind = mode;
  local.validate();
  if (!is_duo(mode)) throw ConfigError("run_duo: '" + std::string(to_string(mode)) + "' is not a duo mode");
  const auto data = load_data(local);
  Session<T> s(local, data, opt);
  const std::string exp(to_string(mode));
  using P = typename Session<T>::DuoPretrain;
  std::vector<Partial> parts(local.seeds.size());
  ForEachSeed(local.seeds.size(), s.threads(), [&](std::size_t i) {
    const auto seed = local.seeds[i];
    const auto plan = Stage(seed, "split", [&] {
      return data::make_unmatched_split(s.split(seed, local.label_fraction), data.a.y, data.a.n_classes());
    });
    const auto fa = Fold::make(data.a, plan, local.pca_components);
    const auto fb = Fold::make(*data.b, plan, local.pca_components);
    const auto va = MakeViews(fa, plan, data.a.y);
    const auto vb = MakeViews(fb, plan, data.a.y);
    const auto ca = s.ftt_config(fa.dim), cb = s.ftt_config(fb.dim, true);
    const training::Views train{va.labelled, vb.labelled}, val{va.val, vb.val}, test{va.test, vb.test};

    const auto pretrained = [&](P how) {
      return s.duo(ca, cb, va.pretrain, vb.pretrain, fa.rows(plan.set1_idx), fb.rows(plan.set2_idx), seed, how);
    };
    const auto fused = [&](const std::string& name, P how) {
      const auto tc = s.train_config(seed);
      const std::string k = s.key(seed, {{"outcome", "duo"}, {"how", int(how)}, {"a", ca}, {"b", cb},
                                         {"pretrain", Session<T>::pretrain_fields(tc)},
                                         {"finetune", Session<T>::finetune_fields(tc)}, {"lf", local.label_fraction}});
      auto o = s.cache().outcome(k);
      if (!o) {
        auto d = pretrained(how);
        Rng head = Rng(seed, "init").derive("head");
        d.attach_classifier(head);
        o = s.finetune_eval(d, name, seed, train, va.y_labelled, val, va.y_val, test, va.y_test);
        s.cache().put(k, *o);
      }
      parts[i].add(exp, name, seed, *o);
    };
    const auto arm = [&](const std::string& name, model::Arm which) {
      const auto d = pretrained(P::kMtr);
      Rng head = Rng(seed, "init").derive("head");
      auto m = model::extract_arm(d, which, head);
      const auto& v = which == model::Arm::kA ? va : vb;
      parts[i].add(exp, name, seed,
                   s.finetune_eval(m, name, seed, {v.labelled}, v.y_labelled, {v.val}, v.y_val, {v.test}, v.y_test));
    };
    const auto single = [&](const std::string& name, const UniViews& v, const model::FTTConfig& mc) {
      auto m = s.ftt(mc, v.pretrain, seed, true, name);
      Rng head = Rng(seed, "init").derive("head");
      m.attach_classifier(head);
      parts[i].add(exp, name, seed,
                   s.finetune_eval(m, name, seed, {v.labelled}, v.y_labelled, {v.val}, v.y_val, {v.test}, v.y_test));
    };

    switch (mode) {
      case Kind::kDuoJoint:
        fused("duo", P::kNone);
        fused("duo_mtr", P::kMtr);
        break;
      case Kind::kDuoClip:
        fused("duo_mtr", P::kMtr);
        fused("duo_clip", P::kClip);
        break;
      case Kind::kDuoUnmatched:
        fused("duo", P::kNone);
        fused("duo_unmatched", P::kUnmatched);
        fused("duo_mtr", P::kMtr);
        break;
      case Kind::kCrossOmics:
        arm("arm_a_from_duo", model::Arm::kA);
        arm("arm_b_from_duo", model::Arm::kB);
        single("ftt_a_mtr", va, ca);
        single("ftt_b_mtr", vb, cb);
        break;
      case Kind::kDuoVsWide: {
        fused("duo_mtr", P::kMtr);
        UniViews wide;
        const auto cat = [](const data::Matrix& a, const data::Matrix& b) {
          data::Matrix out(a.rows(), a.cols() + b.cols());
          out << a, b;
          return out;
        };
        wide.pretrain = cat(va.pretrain, vb.pretrain);
        wide.labelled = cat(va.labelled, vb.labelled);
        wide.val = cat(va.val, vb.val);
        wide.test = cat(va.test, vb.test);
        wide.y_labelled = va.y_labelled;
        wide.y_val = va.y_val;
        wide.y_test = va.y_test;
        single("wide_ftt_mtr", wide, s.ftt_config(fa.dim + fb.dim));
        break;
      }
      default:
        break;
    }
  });
  return Merge(exp, parts);
}

}  // namespace mtr::experiment
