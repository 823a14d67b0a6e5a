#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "mtr/data/synthetic.hpp"
#include "mtr/errors.hpp"
#include "mtr/model/config.hpp"
#include "mtr/training/trainer.hpp"
#include "mtr/util/json_reader.hpp"

namespace mtr::training {

inline void to_json(Json& j, const TrainConfig& c) {
  j = Json{{"learning_rate", c.learning_rate},       {"weight_decay", c.weight_decay},
           {"batch_size", c.batch_size},             {"pretrain_epochs", c.pretrain_epochs},
           {"finetune_max_epochs", c.finetune_max_epochs}, {"patience", c.patience},
           {"symmetric_ntxent", c.symmetric_ntxent}};
}

inline void from_json(const Json& j, TrainConfig& c) {
  JsonReader r(j, "train");
  r.get("learning_rate", c.learning_rate)
      .get("weight_decay", c.weight_decay)
      .get("batch_size", c.batch_size)
      .get("pretrain_epochs", c.pretrain_epochs)
      .get("finetune_max_epochs", c.finetune_max_epochs)
      .get("patience", c.patience)
      .get("symmetric_ntxent", c.symmetric_ntxent);
  r.finish();
}

}  // namespace mtr::training

namespace mtr::experiment {

enum class Kind {
  kUnimodal,
  kMaskRateSweep,
  kLabelFractionSweep,
  kMissingness,
  kDuoJoint,
  kDuoClip,
  kDuoUnmatched,
  kCrossOmics,
  kDuoVsWide,
  kHpo,
};

inline constexpr std::pair<Kind, std::string_view> kKindNames[] = {
    {Kind::kUnimodal, "unimodal"},         {Kind::kMaskRateSweep, "mask_rate_sweep"},
    {Kind::kLabelFractionSweep, "label_fraction_sweep"}, {Kind::kMissingness, "missingness"},
    {Kind::kDuoJoint, "duo_joint"},        {Kind::kDuoClip, "duo_clip"},
    {Kind::kDuoUnmatched, "duo_unmatched"}, {Kind::kCrossOmics, "cross_omics"},
    {Kind::kDuoVsWide, "duo_vs_wide"},     {Kind::kHpo, "hpo"},
};

inline std::string_view to_string(Kind k) {
  for (const auto& [kind, name] : kKindNames)
    if (kind == k) return name;
  return "unknown";
}

inline Kind parse_kind(std::string_view name) {
  for (const auto& [kind, n] : kKindNames)
    if (n == name) return kind;
  throw ConfigError("unknown experiment kind '" + std::string(name) + "'");
}

inline bool is_duo(Kind k) {
  return k == Kind::kDuoJoint || k == Kind::kDuoClip || k == Kind::kDuoUnmatched || k == Kind::kCrossOmics ||
         k == Kind::kDuoVsWide;
}

// In-memory stand-in for dataset files.
struct SyntheticConfig {
  std::string kind = "blobs";  // blobs | bimodal_blobs
  data::BlobsSpec spec;
  std::size_t n_features_b = 0;  // bimodal only; 0 = same as n_features
};

struct MissingnessPlan {
  double p_incomplete = 0.5;
  std::vector<double> p_missing_grid{0.0, 0.25, 0.5, 0.75};
  // Training mask rates for the MTR-augmented model sweep, evaluated at
  // (p_incomplete, sweep_p_missing). Empty skips the sweep.
  std::vector<double> train_mask_rates;
  double sweep_p_missing = 0.5;
  // Mask rate for the MTR-augmented models of the main comparison.
  double augment_p_m = 0.45;
  bool include_pretrained = true;
};

struct HpoSpec {
  std::string model = "ftt";  // ftt | mlp
  std::size_t n_trials = 100;
  std::uint64_t seed = 0;

  void validate() const {
    if (model != "ftt" && model != "mlp") throw ConfigError("hpo.model must be 'ftt' or 'mlp'");
    if (n_trials < 1) throw ConfigError("hpo.n_trials must be at least 1");
  }
};

struct ExperimentConfig {
  Kind kind = Kind::kUnimodal;
  std::vector<std::string> datasets;
  std::optional<SyntheticConfig> synthetic;
  std::string label_column = "label";
  std::size_t min_class_count = 0;
  std::size_t pca_components = 0;
  double label_fraction = 1.0;
  std::vector<std::uint64_t> seeds{0};
  model::FTTConfig model;
  std::optional<model::FTTConfig> model_b;
  std::optional<model::MlpConfig> mlp;
  training::TrainConfig train;
  std::vector<double> mask_rates{0.0, 0.15, 0.3, 0.45, 0.6, 0.75, 0.9};
  std::vector<double> label_fractions{0.01, 0.05, 0.1, 0.5, 1.0};
  MissingnessPlan missingness;
  HpoSpec hpo;
  std::string output_dir = "out";

  void validate() const {
    if (seeds.empty()) throw ConfigError("seeds must not be empty");
    if (datasets.empty() && !synthetic) throw ConfigError("either datasets or synthetic must be given");
    if (!datasets.empty() && synthetic) throw ConfigError("datasets and synthetic are mutually exclusive");
    for (const auto& p : datasets)
      if (!std::filesystem::exists(p)) throw ConfigError("dataset path does not exist: " + p);
    if (is_duo(kind)) {
      const bool two = datasets.size() == 2 || (synthetic && synthetic->kind == "bimodal_blobs");
      if (!two) throw ConfigError(std::string(to_string(kind)) + " needs two datasets or bimodal_blobs");
    } else if (datasets.size() > 1) {
      throw ConfigError(std::string(to_string(kind)) + " takes a single dataset");
    }
    if (synthetic && synthetic->kind != "blobs" && synthetic->kind != "bimodal_blobs") {
      throw ConfigError("synthetic.kind must be blobs or bimodal_blobs");
    }
    if (kind == Kind::kMissingness && pca_components != 0) {
      throw ConfigError("missingness experiments run without PCA; set pca_components to 0");
    }
    if (!(label_fraction > 0.0 && label_fraction <= 1.0)) throw ConfigError("label_fraction must lie in (0, 1]");
    for (double r : mask_rates)
      if (!(r >= 0.0 && r <= 1.0)) throw ConfigError("mask_rates must lie in [0, 1]");
    for (double f : label_fractions)
      if (!(f > 0.0 && f <= 1.0)) throw ConfigError("label_fractions must lie in (0, 1]");
    const auto unit = [](double p) { return p >= 0.0 && p <= 1.0; };
    if (!unit(missingness.p_incomplete) || !unit(missingness.sweep_p_missing) || !unit(missingness.augment_p_m))
      throw ConfigError("missingness probabilities must lie in [0, 1]");
    for (double p : missingness.p_missing_grid)
      if (!unit(p)) throw ConfigError("missingness.p_missing_grid must lie in [0, 1]");
    for (double p : missingness.train_mask_rates)
      if (!unit(p)) throw ConfigError("missingness.train_mask_rates must lie in [0, 1]");
    hpo.validate();
    train.validate();
  }
};

inline void from_json(const Json& j, SyntheticConfig& s) {
  JsonReader r(j, "synthetic");
  r.get("kind", s.kind)
      .get("n_samples", s.spec.n_samples)
      .get("n_features", s.spec.n_features)
      .get("n_classes", s.spec.n_classes)
      .get("separation", s.spec.separation)
      .get("noise", s.spec.noise)
      .get("imbalance", s.spec.imbalance)
      .get("seed", s.spec.seed)
      .get("n_features_b", s.n_features_b);
  r.finish();
}

inline void to_json(Json& j, const SyntheticConfig& s) {
  j = Json{{"kind", s.kind},       {"n_samples", s.spec.n_samples}, {"n_features", s.spec.n_features},
           {"n_classes", s.spec.n_classes}, {"separation", s.spec.separation}, {"noise", s.spec.noise},
           {"imbalance", s.spec.imbalance}, {"seed", s.spec.seed},   {"n_features_b", s.n_features_b}};
}

inline void from_json(const Json& j, MissingnessPlan& m) {
  JsonReader r(j, "missingness");
  r.get("p_incomplete", m.p_incomplete)
      .get("p_missing_grid", m.p_missing_grid)
      .get("train_mask_rates", m.train_mask_rates)
      .get("sweep_p_missing", m.sweep_p_missing)
      .get("augment_p_m", m.augment_p_m)
      .get("include_pretrained", m.include_pretrained);
  r.finish();
}

inline void to_json(Json& j, const MissingnessPlan& m) {
  j = Json{{"p_incomplete", m.p_incomplete},         {"p_missing_grid", m.p_missing_grid},
           {"train_mask_rates", m.train_mask_rates}, {"sweep_p_missing", m.sweep_p_missing},
           {"augment_p_m", m.augment_p_m},           {"include_pretrained", m.include_pretrained}};
}

inline void from_json(const Json& j, HpoSpec& h) {
  JsonReader r(j, "hpo");
  r.get("model", h.model).get("n_trials", h.n_trials).get("seed", h.seed);
  r.finish();
}

inline void to_json(Json& j, const HpoSpec& h) {
  j = Json{{"model", h.model}, {"n_trials", h.n_trials}, {"seed", h.seed}};
}

inline void from_json(const Json& j, ExperimentConfig& c) {
  JsonReader r(j, "config");
  std::string kind = std::string(to_string(c.kind));
  r.get("experiment", kind);
  c.kind = parse_kind(kind);
  r.get("datasets", c.datasets)
      .get("synthetic", c.synthetic)
      .get("label_column", c.label_column)
      .get("min_class_count", c.min_class_count)
      .get("pca_components", c.pca_components)
      .get("label_fraction", c.label_fraction)
      .get("seeds", c.seeds)
      .get("model", c.model)
      .get("model_b", c.model_b)
      .get("mlp", c.mlp)
      .get("train", c.train)
      .get("mask_rates", c.mask_rates)
      .get("label_fractions", c.label_fractions)
      .get("missingness", c.missingness)
      .get("hpo", c.hpo)
      .get("output_dir", c.output_dir);
  r.finish();
}

inline void to_json(Json& j, const ExperimentConfig& c) {
  j = Json{{"experiment", to_string(c.kind)},
           {"datasets", c.datasets},
           {"label_column", c.label_column},
           {"min_class_count", c.min_class_count},
           {"pca_components", c.pca_components},
           {"label_fraction", c.label_fraction},
           {"seeds", c.seeds},
           {"model", c.model},
           {"train", c.train},
           {"mask_rates", c.mask_rates},
           {"label_fractions", c.label_fractions},
           {"missingness", c.missingness},
           {"hpo", c.hpo},
           {"output_dir", c.output_dir}};
  if (c.synthetic) j["synthetic"] = *c.synthetic;
  if (c.model_b) j["model_b"] = *c.model_b;
  if (c.mlp) j["mlp"] = *c.mlp;
}

// Reads a config file. Malformed JSON and unknown keys are config errors.
inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  Json j;
  try {
    j = Json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path + ": " + e.what());
  }
  return j.get<ExperimentConfig>();
}

}  // namespace mtr::experiment
