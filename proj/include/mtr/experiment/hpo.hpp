#pragma once

#include <cmath>
#include <map>
#include <string>

#include "mtr/experiment/runner.hpp"
#include "mtr/log.hpp"

namespace mtr::experiment {

struct Range {
  double lo = 0;
  double hi = 0;
  bool integer = false;

  // Log-uniform once the range spans two orders of magnitude.
  bool log_scale() const { return lo > 0 && hi / lo >= 100.0; }

  double sample(Rng& rng) const {
    const double u = rng.uniform();
    if (integer) return std::floor(lo + u * (hi - lo + 1.0));
    if (log_scale()) return std::exp(std::log(lo) + u * (std::log(hi) - std::log(lo)));
    return lo + u * (hi - lo);
  }
};

inline const std::map<std::string, Range>& FttRanges() {
  static const std::map<std::string, Range> r{
      {"n_layers", {1, 4, true}},
      {"token_dim", {64, 512, true}},
      {"residual_dropout", {0.0, 0.2}},
      {"attention_dropout", {0.0, 0.5}},
      {"ffn_dropout", {0.0, 0.5}},
      {"ffn_factor", {2.0 / 3.0, 8.0 / 3.0}},
      {"learning_rate", {1e-5, 1e-3}},
      {"weight_decay", {1e-6, 1e-3}},
  };
  return r;
}

inline const std::map<std::string, Range>& MlpRanges() {
  static const std::map<std::string, Range> r{
      {"n_layers", {3, 6, true}},
      {"layer_size_factor", {0.5, 1.0}},
      {"epochs", {15, 200, true}},
      {"batch_size", {32, 128, true}},
      {"learning_rate", {1e-4, 0.5}},
  };
  return r;
}

// Draws one trial's parameters. Each trial has its own stream so trial t is
// the same no matter how many trials run.
inline Json SampleTrial(const std::map<std::string, Range>& ranges, std::uint64_t seed, std::size_t trial) {
  Rng rng = Rng(seed, "hpo").derive("trial" + std::to_string(trial));
  Json params = Json::object();
  for (const auto& [name, range] : ranges) {
    const double v = range.sample(rng);
    if (range.integer) {
      params[name] = static_cast<std::size_t>(v);
    } else {
      params[name] = v;
    }
  }
  return params;
}

// Token dimension is rounded to the nearest multiple of n_heads, staying
// within the sampled range.
inline std::size_t RoundToHeads(std::size_t d, std::size_t heads) {
  std::size_t r = std::max<std::size_t>(heads, (d + heads / 2) / heads * heads);
  if (r > 512) r -= heads;
  return r;
}

template <Real T>
ExperimentResult run_hpo(const ExperimentConfig& cfg, const RunOptions<T>& opt = {}) {
  cfg.validate();
  const auto data = load_data(cfg);
  Session<T> s(cfg, data, opt);
  const bool ftt = cfg.hpo.model == "ftt";
  const auto& ranges = ftt ? FttRanges() : MlpRanges();
  const std::string best_name = ftt ? "ftt_hpo" : "mlp_hpo";
  std::vector<Partial> parts(cfg.seeds.size());
  ForEachSeed(cfg.seeds.size(), s.threads(), [&](std::size_t i) {
    const auto seed = cfg.seeds[i];
    const auto plan = Stage(seed, "split", [&] { return s.split(seed, cfg.label_fraction); });
    const auto fold = Fold::make(data.a, plan, cfg.pca_components);
    const auto v = MakeViews(fold, plan, data.a.y);
    std::optional<typename RunCache<T>::Outcome> best;
    Json best_params;
    for (std::size_t t = 0; t < cfg.hpo.n_trials; ++t) {
      Json p = SampleTrial(ranges, cfg.hpo.seed ^ seed, t);
      typename RunCache<T>::Outcome o;
      if (ftt) {
        auto mc = s.ftt_config(fold.dim);
        mc.n_layers = p["n_layers"];
        mc.token_dim = RoundToHeads(p["token_dim"], mc.n_heads);
        p["token_dim"] = mc.token_dim;
        mc.residual_dropout = p["residual_dropout"];
        mc.attention_dropout = p["attention_dropout"];
        mc.ffn_dropout = p["ffn_dropout"];
        mc.ffn_factor = p["ffn_factor"];
        mc.projection_dims = {mc.token_dim};
        auto tc = s.train_config(seed);
        tc.learning_rate = p["learning_rate"];
        tc.weight_decay = p["weight_decay"];
        Rng init(seed, "init");
        model::FTTransformer<T> m(mc, init);
        m.attach_classifier(init);
        o = s.finetune_eval(m, best_name, seed, {v.labelled}, v.y_labelled, {v.val}, v.y_val, {v.test}, v.y_test, {},
                            {}, tc);
      } else {
        model::MlpConfig mc;
        mc.n_layers = p["n_layers"];
        mc.layer_size_factor = p["layer_size_factor"];
        mc.epochs = p["epochs"];
        mc.batch_size = p["batch_size"];
        mc.learning_rate = p["learning_rate"];
        o = MlpVariant(s, mc, v, fold.dim, seed);
      }
      parts[i].trials.push_back({seed, t, p, o.training.best_val_loss, o.training.best_epoch});
      // The best trial's trained model is the one evaluated; nothing is retrained.
      if (!best || o.training.best_val_loss < best->training.best_val_loss) {
        best = o;
        best_params = p;
      }
    }
    parts[i].add("hpo", best_name, seed, *best);
    best_params["seed"] = seed;
    best_params["val_loss"] = best->training.best_val_loss;
    parts[i].best_configs.push_back(best_params);
  });
  return Merge("hpo", parts);
}

template <Real T>
ExperimentResult run_experiment(const ExperimentConfig& cfg, const RunOptions<T>& opt = {}) {
  switch (cfg.kind) {
    case Kind::kUnimodal: return run_unimodal<T>(cfg, opt);
    case Kind::kMaskRateSweep: return run_mask_rate_sweep<T>(cfg, opt);
    case Kind::kLabelFractionSweep: return run_label_fraction_sweep<T>(cfg, opt);
    case Kind::kMissingness: return run_missingness<T>(cfg, opt);
    case Kind::kHpo: return run_hpo<T>(cfg, opt);
    default: return run_duo<T>(cfg, cfg.kind, opt);
  }
}

}  // namespace mtr::experiment
