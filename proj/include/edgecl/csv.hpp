#pragma once

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "edgecl/dataset.hpp"
#include "edgecl/errors.hpp"
#include "edgecl/features.hpp"

namespace edgecl {
namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::stringstream ss(line);
  while (std::getline(ss, cell, ',')) cells.push_back(cell);
  if (!line.empty() && line.back() == ',') cells.push_back("");
  return cells;
}

inline double parse_number(const std::string& cell, const std::string& path, std::size_t line) {
  const char* s = cell.c_str();
  char* end = nullptr;
  const double v = std::strtod(s, &end);
  if (end == s || *end != '\0')
    throw ParseError(path + ":" + std::to_string(line) + ": non-numeric cell '" + cell + "'");
  return v;
}

inline std::string format_number(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline std::string strip_cr(std::string s) {
  if (!s.empty() && s.back() == '\r') s.pop_back();
  return s;
}

}  // namespace detail

// Feature CSV: header f0..f{d-1},label then one numeric row + label string
// per sample. Returned label ids follow the sorted order of distinct label
// strings, so ids do not depend on row order.
inline Dataset load_feature_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) throw ParseError(path + ":1: missing header");
  const auto header = detail::split_csv_line(detail::strip_cr(line));
  if (header.size() < 2 || header.back() != "label")
    throw ParseError(path + ":1: expected feature columns followed by a 'label' column");
  const std::size_t d = header.size() - 1;

  std::vector<std::vector<double>> rows;
  std::vector<std::string> row_labels;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    line = detail::strip_cr(line);
    if (line.empty()) continue;
    const auto cells = detail::split_csv_line(line);
    if (cells.size() != d + 1)
      throw ParseError(path + ":" + std::to_string(line_no) + ": expected " +
                       std::to_string(d + 1) + " columns, got " + std::to_string(cells.size()));
    std::vector<double> row(d);
    for (std::size_t j = 0; j < d; ++j) row[j] = detail::parse_number(cells[j], path, line_no);
    rows.push_back(std::move(row));
    row_labels.push_back(cells.back());
  }

  std::set<std::string> names(row_labels.begin(), row_labels.end());
  std::map<std::string, int> id_of;
  Dataset ds;
  for (const auto& n : names) {
    id_of[n] = static_cast<int>(ds.label_names.size());
    ds.label_names.push_back(n);
  }
  ds.features = rows.empty() ? Matrix(0, d) : Matrix::from_rows(rows);
  for (const auto& n : row_labels) ds.labels.push_back(id_of[n]);
  return ds;
}

inline void save_feature_csv(const std::string& path, const Dataset& ds) {
  ds.validate();
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  for (std::size_t j = 0; j < ds.dim(); ++j) out << "f" << j << ",";
  out << "label\n";
  for (std::size_t i = 0; i < ds.size(); ++i) {
    for (std::size_t j = 0; j < ds.dim(); ++j)
      out << detail::format_number(ds.features(i, j)) << ",";
    out << ds.name_of(ds.labels[i]) << "\n";
  }
  if (!out) throw IoError("write failed for " + path);
}

// Raw sensor CSV: header timestamp,<channel names...>,label; one measurement
// row per tick.
struct RawRecords {
  std::vector<double> timestamps;
  Matrix channels;  // T x layout.channels()
  std::vector<std::string> labels;
};

inline RawRecords load_raw_csv(const std::string& path, std::size_t expected_channels) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) throw ParseError(path + ":1: missing header");
  const auto header = detail::split_csv_line(detail::strip_cr(line));
  if (header.size() < 3 || header.front() != "timestamp" || header.back() != "label")
    throw ParseError(path + ":1: expected timestamp,<channels...>,label header");
  const std::size_t ch = header.size() - 2;
  if (expected_channels > 0 && ch != expected_channels)
    throw ParseError(path + ":1: expected " + std::to_string(expected_channels) +
                     " channel columns, got " + std::to_string(ch));

  RawRecords raw;
  std::vector<std::vector<double>> rows;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    line = detail::strip_cr(line);
    if (line.empty()) continue;
    const auto cells = detail::split_csv_line(line);
    if (cells.size() != ch + 2)
      throw ParseError(path + ":" + std::to_string(line_no) + ": expected " +
                       std::to_string(ch + 2) + " columns, got " + std::to_string(cells.size()));
    raw.timestamps.push_back(detail::parse_number(cells[0], path, line_no));
    std::vector<double> row(ch);
    for (std::size_t j = 0; j < ch; ++j) row[j] = detail::parse_number(cells[j + 1], path, line_no);
    rows.push_back(std::move(row));
    raw.labels.push_back(cells.back());
  }
  raw.channels = rows.empty() ? Matrix(0, ch) : Matrix::from_rows(rows);
  return raw;
}

inline void save_raw_csv(const std::string& path, const std::vector<Window>& windows,
                         const SensorLayout& layout,
                         const std::vector<std::string>& label_names) {
  layout.validate();
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out << "timestamp";
  for (int s = 0; s < layout.triaxial_sensors; ++s)
    for (const char* axis : {"x", "y", "z"}) out << ",tri" << s << "_" << axis;
  for (int s = 0; s < layout.scalar_sensors; ++s) out << ",scalar" << s;
  out << ",label\n";

  std::size_t tick = 0;
  for (const Window& w : windows) {
    if (static_cast<int>(w.channels()) != layout.channels())
      throw DimensionError("save_raw_csv: window channel count mismatch");
    const std::string name = static_cast<std::size_t>(w.label) < label_names.size()
                                 ? label_names[w.label]
                                 : "class" + std::to_string(w.label);
    for (std::size_t t = 0; t < w.length(); ++t, ++tick) {
      out << detail::format_number(static_cast<double>(tick) / layout.sample_rate);
      for (std::size_t c = 0; c < w.channels(); ++c)
        out << "," << detail::format_number(w.samples(t, c));
      out << "," << name << "\n";
    }
  }
  if (!out) throw IoError("write failed for " + path);
}

// Cuts fixed-length windows out of each contiguous same-label run of the raw
// stream. Label ids follow the sorted distinct label strings.
inline std::pair<std::vector<Window>, std::vector<std::string>> windows_from_raw(
    const RawRecords& raw, std::size_t window_len, std::size_t stride) {
  if (raw.channels.rows() == 0) throw DataError("windows_from_raw: empty stream");
  std::set<std::string> names(raw.labels.begin(), raw.labels.end());
  std::map<std::string, int> id_of;
  std::vector<std::string> name_list;
  for (const auto& n : names) {
    id_of[n] = static_cast<int>(name_list.size());
    name_list.push_back(n);
  }

  std::vector<Window> windows;
  std::size_t run_start = 0;
  const std::size_t total = raw.channels.rows();
  for (std::size_t i = 1; i <= total; ++i) {
    if (i < total && raw.labels[i] == raw.labels[run_start]) continue;
    const std::size_t run_len = i - run_start;
    if (run_len >= window_len) {
      Matrix run(run_len, raw.channels.cols());
      for (std::size_t t = 0; t < run_len; ++t) run.set_row(t, raw.channels.row(run_start + t));
      auto cut = window_stream(run, window_len, stride, id_of[raw.labels[run_start]]);
      windows.insert(windows.end(), cut.begin(), cut.end());
    }
    run_start = i;
  }
  if (windows.empty()) throw DataError("windows_from_raw: no run long enough for one window");
  return {std::move(windows), std::move(name_list)};
}

// Rewrites label ids to positions in target_names (e.g. a bundle's label
// table) so ids agree across independently loaded files.
inline void remap_labels(Dataset& ds, const std::vector<std::string>& target_names) {
  std::map<std::string, int> id_of;
  for (std::size_t i = 0; i < target_names.size(); ++i)
    id_of[target_names[i]] = static_cast<int>(i);
  for (auto& y : ds.labels) {
    const std::string name = ds.name_of(y);
    auto it = id_of.find(name);
    if (it == id_of.end()) throw DataError("label '" + name + "' not present in the target table");
    y = it->second;
  }
  ds.label_names = target_names;
}

}  // namespace edgecl
