#pragma once

#include <Eigen/Core>
#include <array>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <istream>
#include <limits>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "mtr/errors.hpp"
#include "mtr/log.hpp"

namespace mtr::data {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;
using MaskMatrix =
    Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline constexpr double kMissing = std::numeric_limits<double>::quiet_NaN();

// One labelled table of numeric features. Missing cells hold NaN and are
// flagged in missing_mask; nothing but imputation should read them.
struct TabularDataset {
  std::vector<std::string> sample_ids;
  Matrix X;
  std::vector<std::size_t> y;
  std::vector<std::string> feature_names;
  std::vector<std::string> class_names;
  std::optional<MaskMatrix> missing_mask;

  std::size_t n_samples() const { return static_cast<std::size_t>(X.rows()); }
  std::size_t n_features() const { return static_cast<std::size_t>(X.cols()); }
  std::size_t n_classes() const { return class_names.size(); }

  std::vector<std::size_t> class_counts() const {
    std::vector<std::size_t> counts(n_classes(), 0);
    for (std::size_t c : y) ++counts[c];
    return counts;
  }

  bool has_missing() const {
    return missing_mask && (missing_mask->array() != 0).any();
  }

  // Throws IntegrityError when an invariant is broken.
  void validate() const {
    if (sample_ids.size() != n_samples() || y.size() != n_samples()) {
      throw IntegrityError("dataset has " + std::to_string(n_samples()) +
                           " rows but " + std::to_string(sample_ids.size()) +
                           " ids and " + std::to_string(y.size()) + " labels");
    }
    if (feature_names.size() != n_features()) {
      throw IntegrityError("feature name count does not match feature columns");
    }
    std::unordered_set<std::string> ids;
    for (const auto& id : sample_ids)
      if (!ids.insert(id).second) throw IntegrityError("duplicate sample id '" + id + "'");
    for (std::size_t c : y)
      if (c >= n_classes())
        throw IntegrityError("class index " + std::to_string(c) + " out of range");
    if (missing_mask && (missing_mask->rows() != X.rows() || missing_mask->cols() != X.cols()))
      throw IntegrityError("missing mask shape does not match features");
  }

  TabularDataset subset(std::span<const std::size_t> rows) const {
    TabularDataset out;
    out.feature_names = feature_names;
    out.class_names = class_names;
    out.X.resize(static_cast<Eigen::Index>(rows.size()), X.cols());
    if (missing_mask) out.missing_mask = MaskMatrix(out.X.rows(), X.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) {
      const auto r = static_cast<Eigen::Index>(rows[i]);
      out.X.row(static_cast<Eigen::Index>(i)) = X.row(r);
      if (missing_mask) out.missing_mask->row(static_cast<Eigen::Index>(i)) = missing_mask->row(r);
      out.sample_ids.push_back(sample_ids[rows[i]]);
      out.y.push_back(y[rows[i]]);
    }
    return out;
  }
};

namespace detail {

inline std::vector<std::string_view> SplitLine(std::string_view line, char delim) {
  std::vector<std::string_view> cells;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = line.find(delim, start);
    if (pos == std::string_view::npos) {
      cells.push_back(line.substr(start));
      break;
    }
    cells.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
  return cells;
}

inline std::string_view Trim(std::string_view s) {
  while (!s.empty() && (s.back() == '\r' || s.back() == ' ')) s.remove_suffix(1);
  while (!s.empty() && s.front() == ' ') s.remove_prefix(1);
  return s;
}

inline bool ParseReal(std::string_view cell, double& out) {
  if (cell.empty()) return false;
  if (cell.front() == '+') cell.remove_prefix(1);
  const auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), out);
  return ec == std::errc() && ptr == cell.data() + cell.size();
}

}  // namespace detail

// Parses a delimited table: header row, sample id in the first column, a
// label column found by name, every other column numeric. The delimiter is
// detected from the header (tab if present, comma otherwise) unless given.
inline TabularDataset load_table(std::istream& in, const std::string& label_column = "label",
                                 std::optional<char> delimiter = std::nullopt) {
  std::string header;
  if (!std::getline(in, header)) throw ParseError("empty input: no header row", 1, 0);
  if (header.size() >= 3 && header.compare(0, 3, "\xEF\xBB\xBF") == 0) header.erase(0, 3);
  const char delim = delimiter.value_or(header.find('\t') != std::string::npos ? '\t' : ',');

  auto columns = detail::SplitLine(header, delim);
  if (columns.size() < 3) {
    throw ParseError("header needs an id column, a label column and at least one feature",
                     1, 0);
  }
  std::size_t label_at = columns.size();
  for (std::size_t j = 1; j < columns.size(); ++j)
    if (detail::Trim(columns[j]) == label_column) label_at = j;
  if (label_at == columns.size()) {
    throw ParseError("label column '" + label_column + "' not found in header", 1, 0);
  }

  TabularDataset ds;
  for (std::size_t j = 1; j < columns.size(); ++j)
    if (j != label_at) ds.feature_names.emplace_back(detail::Trim(columns[j]));
  const std::size_t n_features = ds.feature_names.size();

  std::vector<double> values;
  std::vector<std::uint8_t> missing;
  bool any_missing = false;
  std::unordered_map<std::string, std::size_t> class_index;
  std::unordered_set<std::string> seen_ids;
  std::string line;
  long line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (detail::Trim(line).empty()) continue;
    auto cells = detail::SplitLine(line, delim);
    if (cells.size() != columns.size()) {
      throw ParseError("row " + std::to_string(line_no) + " has " +
                           std::to_string(cells.size()) + " cells, header has " +
                           std::to_string(columns.size()),
                       line_no, static_cast<long>(cells.size()));
    }
    std::string id(detail::Trim(cells[0]));
    if (!seen_ids.insert(id).second) {
      throw IntegrityError("duplicate sample id '" + id + "' at row " + std::to_string(line_no));
    }
    ds.sample_ids.push_back(std::move(id));

    std::string label(detail::Trim(cells[label_at]));
    auto [it, inserted] = class_index.emplace(label, ds.class_names.size());
    if (inserted) ds.class_names.push_back(label);
    ds.y.push_back(it->second);

    for (std::size_t j = 1; j < cells.size(); ++j) {
      if (j == label_at) continue;
      const auto cell = detail::Trim(cells[j]);
      double v = 0.0;
      if (cell.empty()) {
        values.push_back(kMissing);
        missing.push_back(1);
        any_missing = true;
      } else if (detail::ParseReal(cell, v)) {
        values.push_back(v);
        missing.push_back(0);
      } else {
        throw ParseError("cannot parse '" + std::string(cell) + "' at row " +
                             std::to_string(line_no) + ", column '" +
                             std::string(detail::Trim(columns[j])) + "'",
                         line_no, static_cast<long>(j));
      }
    }
  }

  const auto n = static_cast<Eigen::Index>(ds.sample_ids.size());
  ds.X = Eigen::Map<Matrix>(values.data(), n, static_cast<Eigen::Index>(n_features));
  if (any_missing) {
    ds.missing_mask =
        Eigen::Map<MaskMatrix>(missing.data(), n, static_cast<Eigen::Index>(n_features));
  }
  if (ds.n_classes() < 2) {
    throw TaskError("classification needs at least two classes, found " +
                    std::to_string(ds.n_classes()));
  }
  return ds;
}

inline TabularDataset load_table(const std::string& path, const std::string& label_column = "label",
                                 std::optional<char> delimiter = std::nullopt) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open '" + path + "'");
  return load_table(in, label_column, delimiter);
}

inline void write_table(std::ostream& out, const TabularDataset& ds, char delimiter = ',',
                        const std::string& label_column = "label") {
  out << "sample_id" << delimiter << label_column;
  for (const auto& f : ds.feature_names) out << delimiter << f;
  out << '\n';
  std::array<char, 32> buf{};
  for (std::size_t i = 0; i < ds.n_samples(); ++i) {
    out << ds.sample_ids[i] << delimiter << ds.class_names[ds.y[i]];
    for (std::size_t j = 0; j < ds.n_features(); ++j) {
      out << delimiter;
      const auto r = static_cast<Eigen::Index>(i), c = static_cast<Eigen::Index>(j);
      if (ds.missing_mask && (*ds.missing_mask)(r, c)) continue;
      const auto res = std::to_chars(buf.data(), buf.data() + buf.size(), ds.X(r, c));
      out.write(buf.data(), res.ptr - buf.data());
    }
    out << '\n';
  }
}

inline void write_table(const std::string& path, const TabularDataset& ds, char delimiter = ',',
                        const std::string& label_column = "label") {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write '" + path + "'");
  write_table(out, ds, delimiter, label_column);
}

// Keeps classes with strictly more than min_count samples and re-indexes the
// survivors densely in their original order.
inline TabularDataset filter_min_class(const TabularDataset& ds, std::size_t min_count = 100) {
  if (min_count < 1) throw ConfigError("filter_min_class: min_count must be >= 1");
  const auto counts = ds.class_counts();
  std::vector<std::size_t> remap(ds.n_classes(), ds.n_classes());
  std::vector<std::string> kept_names;
  for (std::size_t c = 0; c < ds.n_classes(); ++c) {
    if (counts[c] > min_count) {
      remap[c] = kept_names.size();
      kept_names.push_back(ds.class_names[c]);
    }
  }
  if (kept_names.empty()) {
    throw TaskError("no class has more than " + std::to_string(min_count) + " samples");
  }
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < ds.n_samples(); ++i)
    if (remap[ds.y[i]] != ds.n_classes()) rows.push_back(i);
  TabularDataset out = ds.subset(rows);
  for (auto& c : out.y) c = remap[c];
  out.class_names = std::move(kept_names);
  return out;
}

struct PairedDatasets {
  TabularDataset a;
  TabularDataset b;
  std::size_t dropped = 0;
};

// Inner join on sample id. Rows follow the order of `a`; class indices are
// re-derived so that both halves share the same class_names.
inline PairedDatasets join_on_ids(const TabularDataset& a, const TabularDataset& b) {
  std::unordered_map<std::string, std::size_t> b_rows;
  for (std::size_t i = 0; i < b.n_samples(); ++i) b_rows.emplace(b.sample_ids[i], i);
  std::vector<std::size_t> rows_a, rows_b;
  for (std::size_t i = 0; i < a.n_samples(); ++i) {
    auto it = b_rows.find(a.sample_ids[i]);
    if (it == b_rows.end()) continue;
    if (a.class_names[a.y[i]] != b.class_names[b.y[it->second]]) {
      throw IntegrityError("sample '" + a.sample_ids[i] + "' has label '" +
                           a.class_names[a.y[i]] + "' in one modality and '" +
                           b.class_names[b.y[it->second]] + "' in the other");
    }
    rows_a.push_back(i);
    rows_b.push_back(it->second);
  }
  PairedDatasets out;
  out.dropped = (a.n_samples() - rows_a.size()) + (b.n_samples() - rows_b.size());
  out.a = a.subset(rows_a);
  out.b = b.subset(rows_b);

  // Dense class indexing by first appearance in the joined order.
  std::unordered_map<std::string, std::size_t> index;
  std::vector<std::string> names;
  std::vector<std::size_t> y;
  for (std::size_t i = 0; i < out.a.n_samples(); ++i) {
    const auto& name = out.a.class_names[out.a.y[i]];
    auto [it, inserted] = index.emplace(name, names.size());
    if (inserted) names.push_back(name);
    y.push_back(it->second);
  }
  out.a.y = y;
  out.b.y = y;
  out.a.class_names = names;
  out.b.class_names = names;
  if (out.dropped > 0) {
    log::info("join: dropped " + std::to_string(out.dropped) +
              " samples without data in both modalities");
  }
  return out;
}

}  // namespace mtr::data
