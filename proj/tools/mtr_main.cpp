// mtr: config-driven experiment runner.
//
//   mtr synth --kind blobs --samples 2000 --features 200 --classes 10 --out data/
//   mtr run configs/unimodal.json --seed-list 0,1,2 --out results/
//   mtr sweep-mask configs/unimodal.json --rates 0,0.45,0.9
//   mtr sweep-missing configs/missing.json
//   mtr duo clip configs/duo.json
//   mtr hpo configs/unimodal.json --model mlp --trials 20
//   mtr report results/

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include "CLI11.hpp"
#include "mtr/data/dataset.hpp"
#include "mtr/data/synthetic.hpp"
#include "mtr/errors.hpp"
#include "mtr/experiment/config.hpp"
#include "mtr/experiment/hpo.hpp"
#include "mtr/experiment/report.hpp"
#include "mtr/experiment/runner.hpp"
#include "mtr/log.hpp"

namespace fs = std::filesystem;
using namespace mtr;
using experiment::ExperimentConfig;
using experiment::Kind;

namespace {

struct Common {
  std::string seed_list;
  std::string out;
  std::string precision = "f64";
  std::size_t threads = 1;
};

std::vector<std::uint64_t> ParseSeeds(const std::string& text) {
  std::vector<std::uint64_t> seeds;
  std::stringstream ss(text);
  for (std::string item; std::getline(ss, item, ',');) {
    try {
      std::size_t used = 0;
      seeds.push_back(std::stoull(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw ConfigError("--seed-list: not an integer: '" + item + "'");
    }
  }
  if (seeds.empty()) throw ConfigError("--seed-list is empty");
  return seeds;
}

void ApplyCommon(ExperimentConfig& cfg, const Common& c) {
  if (!c.seed_list.empty()) cfg.seeds = ParseSeeds(c.seed_list);
  if (!c.out.empty()) cfg.output_dir = c.out;
}

template <Real T>
experiment::ExperimentResult Dispatch(const ExperimentConfig& cfg, const Common& c) {
  experiment::RunCache<T> cache;
  experiment::RunOptions<T> opt{.progress = &std::cout, .cache = &cache, .threads = c.threads};
  return experiment::run_experiment<T>(cfg, opt);
}

int RunConfig(ExperimentConfig cfg, const Common& c) {
  ApplyCommon(cfg, c);
  cfg.validate();
  if (c.precision == "f32")
    std::cout << "note: 32-bit runs are not guaranteed to reproduce byte-identical CSVs\n";
  const auto result = c.precision == "f32" ? Dispatch<float>(cfg, c) : Dispatch<double>(cfg, c);
  const auto files = experiment::write_result(result, cfg.output_dir);
  for (const auto& f : files) std::cout << "wrote " << f.string() << '\n';
  return 0;
}

int Synth(const std::string& kind, const data::BlobsSpec& spec, std::size_t features_b, const std::string& out) {
  if (spec.n_classes < 2) throw ConfigError("synth: --classes must be at least 2");
  if (spec.n_samples < 10 * spec.n_classes) throw ConfigError("synth: --samples must be at least 10 x classes");
  const fs::path dir = out.empty() ? fs::path(".") : fs::path(out);
  fs::create_directories(dir);
  if (kind == "blobs") {
    const auto path = dir / "blobs.csv";
    data::write_table(path.string(), data::make_blobs(spec));
    std::cout << "wrote " << path.string() << '\n';
  } else if (kind == "bimodal_blobs") {
    const auto pair = data::make_bimodal_blobs(spec, features_b);
    const auto pa = dir / "bimodal_a.csv", pb = dir / "bimodal_b.csv";
    data::write_table(pa.string(), pair.a);
    data::write_table(pb.string(), pair.b);
    std::cout << "wrote " << pa.string() << "\nwrote " << pb.string() << '\n';
  } else {
    throw ConfigError("synth: --kind must be blobs or bimodal_blobs");
  }
  return 0;
}

Kind DuoKind(const std::string& mode) {
  if (mode == "joint") return Kind::kDuoJoint;
  if (mode == "clip") return Kind::kDuoClip;
  if (mode == "unmatched") return Kind::kDuoUnmatched;
  if (mode == "cross_omics") return Kind::kCrossOmics;
  if (mode == "duo_vs_wide") return Kind::kDuoVsWide;
  throw ConfigError("duo: unknown mode '" + mode + "'");
}

std::vector<double> ParseList(const std::string& text, const char* flag) {
  std::vector<double> v;
  std::stringstream ss(text);
  for (std::string item; std::getline(ss, item, ',');) {
    try {
      v.push_back(std::stod(item));
    } catch (const std::exception&) {
      throw ConfigError(std::string(flag) + ": not a number: '" + item + "'");
    }
  }
  return v;
}

}  // namespace

int main(int argc, char** argv) {
#if defined(__GLIBC__)
  // Keep freed tensor buffers in the heap instead of returning them to the
  // kernel on every step.
  mallopt(M_MMAP_THRESHOLD, 256 * 1024 * 1024);
  mallopt(M_TRIM_THRESHOLD, 512 * 1024 * 1024);
#endif
  log::set_warning_sink([](const std::string& m) { std::cerr << "warning: " << m << '\n'; });

  CLI::App app{"Contrastive pretraining for tabular data with mask token replacement"};
  app.require_subcommand(1);
  app.fallthrough();
  Common common;
  app.add_option("--seed-list", common.seed_list, "Comma-separated seeds, overriding the config");
  app.add_option("--out", common.out, "Output directory, overriding the config");
  app.add_option("--precision", common.precision, "Floating point precision")
      ->check(CLI::IsMember({"f32", "f64"}));
  app.add_option("--threads", common.threads, "Seeds trained in parallel")->check(CLI::PositiveNumber);

  auto* synth = app.add_subcommand("synth", "Write a synthetic dataset as CSV");
  std::string synth_kind = "blobs";
  data::BlobsSpec spec;
  std::size_t features_b = 0;
  synth->add_option("--kind", synth_kind, "blobs or bimodal_blobs")->check(CLI::IsMember({"blobs", "bimodal_blobs"}));
  synth->add_option("--samples", spec.n_samples);
  synth->add_option("--features", spec.n_features);
  synth->add_option("--features-b", features_b, "Second view width (bimodal; 0 = same)");
  synth->add_option("--classes", spec.n_classes);
  synth->add_option("--separation", spec.separation);
  synth->add_option("--noise", spec.noise);
  synth->add_option("--imbalance", spec.imbalance);
  synth->add_option("--seed", spec.seed);

  std::string config_path;
  auto* run = app.add_subcommand("run", "Run the experiment a config file describes");
  run->add_option("config", config_path)->required()->check(CLI::ExistingFile);

  auto* sweep_mask = app.add_subcommand("sweep-mask", "Pretraining mask-rate sweep");
  std::string rates;
  sweep_mask->add_option("config", config_path)->required()->check(CLI::ExistingFile);
  sweep_mask->add_option("--rates", rates, "Comma-separated mask rates");

  auto* sweep_missing = app.add_subcommand("sweep-missing", "Missing-value robustness comparison");
  sweep_missing->add_option("config", config_path)->required()->check(CLI::ExistingFile);

  auto* duo = app.add_subcommand("duo", "Two-view DuoFTT experiments");
  std::string mode;
  duo->add_option("mode", mode, "joint, clip, unmatched, cross_omics or duo_vs_wide")->required();
  duo->add_option("config", config_path)->required()->check(CLI::ExistingFile);

  auto* hpo = app.add_subcommand("hpo", "Random hyperparameter search");
  std::optional<std::string> hpo_model;
  std::optional<std::size_t> trials;
  hpo->add_option("config", config_path)->required()->check(CLI::ExistingFile);
  hpo->add_option("--model", hpo_model, "ftt or mlp");
  hpo->add_option("--trials", trials);

  auto* report = app.add_subcommand("report", "Aggregate result CSVs in a directory");
  std::string report_dir;
  report->add_option("dir", report_dir, "Results directory (default: --out)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : static_cast<int>(ExitCode::kConfig);
  }

  try {
    if (*synth) return Synth(synth_kind, spec, features_b, common.out);
    if (*report) {
      const std::string dir = !report_dir.empty() ? report_dir : (!common.out.empty() ? common.out : "out");
      const auto files = experiment::emit_report(dir);
      for (const auto& f : {files.aggregate_csv, files.aggregate_md, files.long_csv})
        std::cout << "wrote " << f.string() << '\n';
      return 0;
    }
    auto cfg = experiment::load_config(config_path);
    if (*sweep_mask) {
      cfg.kind = Kind::kMaskRateSweep;
      if (!rates.empty()) cfg.mask_rates = ParseList(rates, "--rates");
    } else if (*sweep_missing) {
      cfg.kind = Kind::kMissingness;
    } else if (*duo) {
      cfg.kind = DuoKind(mode);
    } else if (*hpo) {
      cfg.kind = Kind::kHpo;
      if (hpo_model) cfg.hpo.model = *hpo_model;
      if (trials) cfg.hpo.n_trials = *trials;
    }
    return RunConfig(cfg, common);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return static_cast<int>(e.exit_code());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
