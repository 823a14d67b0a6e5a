#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "mtr/experiment/runner.hpp"
#include "mtr/metrics/metrics.hpp"

namespace mtr::experiment {

namespace fs = std::filesystem;

inline constexpr const char* kSweepHeader = "sweep,x,y,series,seed";
inline constexpr const char* kTrainingHeader = "model,seed,best_epoch,stopped_epoch,best_val_loss";
inline constexpr const char* kAggregateHeader =
    "experiment,model,n_seeds,accuracy_mean,accuracy_sd,auroc_mean,auroc_sd,f1_mean,f1_sd,precision_mean,precision_sd";

inline std::ofstream OpenForWrite(const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write " + path.string());
  return out;
}

// Rows grouped by model, in order of first appearance.
inline std::vector<std::pair<std::string, std::vector<metrics::MetricsReport>>> GroupByModel(
    const std::vector<metrics::ResultRow>& rows) {
  std::vector<std::pair<std::string, std::vector<metrics::MetricsReport>>> groups;
  for (const auto& r : rows) {
    auto it = std::find_if(groups.begin(), groups.end(), [&](const auto& g) { return g.first == r.model; });
    if (it == groups.end()) {
      groups.push_back({r.model, {}});
      it = groups.end() - 1;
    }
    it->second.push_back(r.metrics);
  }
  return groups;
}

inline void write_sweep(std::ostream& os, const std::vector<SweepPoint>& points) {
  os << kSweepHeader << '\n';
  for (const auto& p : points)
    os << p.sweep << ',' << metrics::FormatDouble(p.x) << ',' << metrics::FormatDouble(p.y) << ',' << p.series << ','
       << p.seed << '\n';
}

// Per-seed rows: <experiment>_results.csv; per-model mean/sd:
// <experiment>_summary.csv; sweeps, training records and HPO trials alongside.
// Returns the files written.
inline std::vector<fs::path> write_result(const ExperimentResult& r, const fs::path& dir) {
  fs::create_directories(dir);
  std::vector<fs::path> files;
  const auto file = [&](const std::string& suffix) {
    files.push_back(dir / (r.experiment + suffix));
    return OpenForWrite(files.back());
  };
  {
    auto os = file("_results.csv");
    metrics::write_result_rows(os, r.rows);
  }
  {
    auto os = file("_summary.csv");
    os << "experiment,model," << metrics::kSummaryHeader << '\n';
    for (const auto& [model, reports] : GroupByModel(r.rows)) {
      std::ostringstream body;
      metrics::write_summary(body, metrics::aggregate_seeds(reports), false);
      std::istringstream lines(body.str());
      for (std::string line; std::getline(lines, line);) os << r.experiment << ',' << model << ',' << line << '\n';
    }
  }
  {
    // Wall time stays out of the files so that reruns are byte-identical.
    auto os = file("_training.csv");
    os << kTrainingHeader << '\n';
    for (const auto& t : r.training)
      os << t.model << ',' << t.seed << ',' << t.best_epoch << ',' << t.stopped_epoch << ','
         << metrics::FormatDouble(t.best_val_loss) << '\n';
  }
  if (!r.points.empty()) {
    auto os = file("_sweep.csv");
    write_sweep(os, r.points);
  }
  if (!r.trials.empty()) {
    auto os = file("_trials.csv");
    os << "seed,trial,val_loss,best_epoch,params\n";
    for (const auto& t : r.trials) {
      std::string params = t.params.dump();
      for (auto& ch : params)
        if (ch == ',') ch = ';';
      os << t.seed << ',' << t.trial << ',' << metrics::FormatDouble(t.val_loss) << ',' << t.best_epoch << ','
         << params << '\n';
    }
    auto best = file("_best.json");
    best << Json(r.best_configs).dump(2) << '\n';
  }
  return files;
}

// Parses a file written by write_result_rows.
inline std::vector<metrics::ResultRow> read_result_rows(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read " + path.string());
  std::string line;
  std::getline(in, line);
  if (line != metrics::kResultHeader) throw DataError(path.string() + ": unexpected header");
  std::vector<metrics::ResultRow> rows;
  long row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty()) continue;
    const auto f = data::detail::SplitLine(line, ',');
    if (f.size() != 7) throw ParseError(path.string() + ": expected 7 fields", row, long(f.size()));
    metrics::ResultRow r;
    r.experiment = std::string(f[0]);
    r.model = std::string(f[1]);
    try {
      r.seed = std::stoull(std::string(f[2]));
      r.metrics.accuracy = std::stod(std::string(f[3]));
      r.metrics.macro_auroc = std::stod(std::string(f[4]));
      r.metrics.macro_f1 = std::stod(std::string(f[5]));
      r.metrics.macro_precision = std::stod(std::string(f[6]));
    } catch (const std::exception&) {
      throw ParseError(path.string() + ": malformed number", row, 0);
    }
    r.metrics.seed = r.seed;
    rows.push_back(std::move(r));
  }
  return rows;
}

struct ReportFiles {
  fs::path aggregate_csv;
  fs::path aggregate_md;
  fs::path long_csv;
};

// Aggregates every *_results.csv under `dir` into report_aggregate.csv (mean
// and sd per experiment/model) and report.md (mean ± sd), and concatenates
// every *_sweep.csv into report_long.csv.
inline ReportFiles emit_report(const fs::path& dir) {
  std::vector<fs::path> results, sweeps;
  if (!fs::is_directory(dir)) throw ConfigError("report: not a directory: " + dir.string());
  for (const auto& e : fs::directory_iterator(dir)) {
    const auto name = e.path().filename().string();
    if (name.ends_with("_results.csv")) results.push_back(e.path());
    if (name.ends_with("_sweep.csv")) sweeps.push_back(e.path());
  }
  if (results.empty()) throw ConfigError("report: no *_results.csv in " + dir.string());
  std::sort(results.begin(), results.end());
  std::sort(sweeps.begin(), sweeps.end());

  ReportFiles out{dir / "report_aggregate.csv", dir / "report.md", dir / "report_long.csv"};
  auto csv = OpenForWrite(out.aggregate_csv);
  auto md = OpenForWrite(out.aggregate_md);
  csv << kAggregateHeader << '\n';
  md << "| experiment | model | seeds | accuracy | AUROC | F1 | precision |\n|---|---|---|---|---|---|---|\n";
  const auto pm = [](const metrics::MeanSd& m) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.4f ± %.4f", m.mean, m.sd);
    return std::string(buf);
  };
  for (const auto& path : results) {
    const auto rows = read_result_rows(path);
    std::map<std::string, std::vector<metrics::ResultRow>> by_experiment;
    for (const auto& r : rows) by_experiment[r.experiment].push_back(r);
    for (const auto& [experiment, group] : by_experiment) {
      for (const auto& [model, reports] : GroupByModel(group)) {
        const auto s = metrics::aggregate_seeds(reports);
        csv << experiment << ',' << model << ',' << s.n_seeds;
        for (const auto* m : {&s.accuracy, &s.auroc, &s.f1, &s.precision})
          csv << ',' << metrics::FormatDouble(m->mean) << ',' << metrics::FormatDouble(m->sd);
        csv << '\n';
        md << "| " << experiment << " | " << model << " | " << s.n_seeds << " | " << pm(s.accuracy) << " | "
           << pm(s.auroc) << " | " << pm(s.f1) << " | " << pm(s.precision) << " |\n";
      }
    }
  }

  auto lg = OpenForWrite(out.long_csv);
  lg << "experiment," << kSweepHeader << '\n';
  for (const auto& path : sweeps) {
    std::string experiment = path.filename().string();
    experiment.resize(experiment.size() - std::string("_sweep.csv").size());
    std::ifstream in(path);
    std::string line;
    std::getline(in, line);
    if (line != kSweepHeader) throw DataError(path.string() + ": unexpected header");
    while (std::getline(in, line))
      if (!line.empty()) lg << experiment << ',' << line << '\n';
  }
  return out;
}

}  // namespace mtr::experiment
