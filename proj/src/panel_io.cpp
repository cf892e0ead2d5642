#include "wgfe/panel_io.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <unordered_map>

namespace wgfe {
namespace {

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream is(line);
  while (std::getline(is, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

std::string trim(std::string s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

std::optional<double> to_double(const std::string& s) {
  double v = 0.0;
  const char* begin = s.data();
  const char* end = s.data() + s.size();
  if (begin != end && *begin == '+') ++begin;
  const auto [ptr, ec] = std::from_chars(begin, end, v);
  if (ec != std::errc() || ptr != end) return std::nullopt;
  return v;
}

std::string format_double(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ec == std::errc() ? ptr : buf);
}

std::ifstream open_in(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::InvalidInput, "cannot open " + path);
  return in;
}

}  // namespace

ParseError::ParseError(int line, int column, const std::string& what)
    : Error(ErrorCode::ParseError, "line " + std::to_string(line) + ", column " + std::to_string(column) + ": " + what),
      line_(line),
      column_(column) {}

PanelDataset parse_csv(std::istream& in) {
  std::string line;
  int line_no = 0;
  // Skip a UTF-8 byte order mark and blank lines before the header.
  while (std::getline(in, line)) {
    ++line_no;
    if (line_no == 1 && line.rfind("\xEF\xBB\xBF", 0) == 0) line.erase(0, 3);
    if (!trim(line).empty()) break;
  }
  if (trim(line).empty()) throw ParseError(line_no, 1, "missing header row");
  std::vector<std::string> header = split(line);
  for (auto& h : header) h = trim(h);
  const char* required[] = {"unit", "time", "y"};
  for (int c = 0; c < 3; ++c) {
    if (static_cast<int>(header.size()) <= c || header[static_cast<std::size_t>(c)] != required[c]) {
      throw ParseError(line_no, c + 1, std::string("header column must be '") + required[c] + "'");
    }
  }
  const int p = static_cast<int>(header.size()) - 3;
  const std::size_t width = header.size();

  struct Row {
    std::string unit;
    std::string time;
    std::vector<double> values;  // y, x1..xp
    int line;
  };
  std::vector<Row> rows;
  std::vector<std::string> units;
  std::unordered_map<std::string, int> unit_index;
  std::vector<std::string> times;
  std::unordered_map<std::string, int> time_seen;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    std::vector<std::string> cells = split(line);
    if (cells.size() != width) {
      throw ParseError(line_no, static_cast<int>(std::min(cells.size(), width)) + 1,
                       "expected " + std::to_string(width) + " fields, found " + std::to_string(cells.size()));
    }
    Row row;
    row.line = line_no;
    row.unit = trim(cells[0]);
    row.time = trim(cells[1]);
    if (row.unit.empty()) throw ParseError(line_no, 1, "empty unit label");
    if (row.time.empty()) throw ParseError(line_no, 2, "empty time label");
    for (std::size_t c = 2; c < width; ++c) {
      const std::string cell = trim(cells[c]);
      const auto v = to_double(cell);
      if (!v) throw ParseError(line_no, static_cast<int>(c) + 1, "not a number: '" + cell + "'");
      if (!std::isfinite(*v)) throw ParseError(line_no, static_cast<int>(c) + 1, "non-finite value");
      row.values.push_back(*v);
    }
    if (unit_index.emplace(row.unit, static_cast<int>(units.size())).second) units.push_back(row.unit);
    if (time_seen.emplace(row.time, 0).second) times.push_back(row.time);
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw ParseError(line_no, 1, "no data rows");

  const bool numeric = std::all_of(times.begin(), times.end(), [](const std::string& s) { return to_double(s).has_value(); });
  if (numeric) {
    std::stable_sort(times.begin(), times.end(),
                     [](const std::string& a, const std::string& b) { return *to_double(a) < *to_double(b); });
    for (std::size_t k = 1; k < times.size(); ++k) {
      if (*to_double(times[k]) == *to_double(times[k - 1])) {
        throw Error(ErrorCode::DuplicateCell, "time labels '" + times[k - 1] + "' and '" + times[k] +
                                                  "' denote the same period");
      }
    }
  } else {
    std::sort(times.begin(), times.end());
  }
  std::unordered_map<std::string, int> time_index;
  for (std::size_t k = 0; k < times.size(); ++k) time_index[times[k]] = static_cast<int>(k);

  const int n = static_cast<int>(units.size());
  const int t = static_cast<int>(times.size());
  Matrix y(n, t);
  std::vector<Matrix> x(static_cast<std::size_t>(p), Matrix(n, t));
  std::vector<int> filled(static_cast<std::size_t>(n) * t, 0);
  for (const Row& row : rows) {
    const int i = unit_index.at(row.unit);
    const int s = time_index.at(row.time);
    int& cell = filled[static_cast<std::size_t>(i) * t + s];
    if (cell != 0) {
      throw Error(ErrorCode::DuplicateCell, "duplicate cell (unit " + row.unit + ", time " + row.time + ") at lines " +
                                                std::to_string(cell) + " and " + std::to_string(row.line));
    }
    cell = row.line;
    y(i, s) = row.values[0];
    for (int k = 0; k < p; ++k) x[static_cast<std::size_t>(k)](i, s) = row.values[static_cast<std::size_t>(k) + 1];
  }
  std::vector<std::string> missing;
  for (int i = 0; i < n; ++i) {
    for (int s = 0; s < t; ++s) {
      if (filled[static_cast<std::size_t>(i) * t + s] == 0) missing.push_back("(" + units[static_cast<std::size_t>(i)] + "," + times[static_cast<std::size_t>(s)] + ")");
    }
  }
  if (!missing.empty()) {
    std::string msg = "unbalanced panel, missing " + std::to_string(missing.size()) + " cell(s):";
    const std::size_t shown = std::min<std::size_t>(missing.size(), 20);
    for (std::size_t k = 0; k < shown; ++k) msg += " " + missing[k];
    if (shown < missing.size()) msg += " ...";
    throw Error(ErrorCode::UnbalancedPanel, msg);
  }
  return PanelDataset(std::move(y), std::move(x), std::move(units), std::move(times));
}

PanelDataset ingest_csv(const std::string& path) {
  std::ifstream in = open_in(path);
  return parse_csv(in);
}

void emit_csv(const PanelDataset& data, std::ostream& out) {
  out << "unit,time,y";
  for (int k = 0; k < data.n_covariates(); ++k) out << ",x" << k + 1;
  out << '\n';
  for (int i = 0; i < data.n_units(); ++i) {
    for (int s = 0; s < data.n_periods(); ++s) {
      out << data.unit_labels()[static_cast<std::size_t>(i)] << ',' << data.period_labels()[static_cast<std::size_t>(s)]
          << ',' << format_double(data.outcomes()(i, s));
      for (int k = 0; k < data.n_covariates(); ++k) out << ',' << format_double(data.covariate(k)(i, s));
      out << '\n';
    }
  }
}

void emit_csv(const PanelDataset& data, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::InvalidInput, "cannot write " + path);
  emit_csv(data, out);
}

GroupAssignment ingest_truth_csv(const std::string& path, const PanelDataset& data) {
  std::ifstream in = open_in(path);
  std::string line;
  int line_no = 0;
  if (!std::getline(in, line)) throw ParseError(1, 1, "missing header row");
  ++line_no;
  std::unordered_map<std::string, int> index;
  for (int i = 0; i < data.n_units(); ++i) index[data.unit_labels()[static_cast<std::size_t>(i)]] = i;
  std::vector<int> labels(static_cast<std::size_t>(data.n_units()), -1);
  int groups = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto cells = split(line);
    if (cells.size() != 2) throw ParseError(line_no, 1, "expected unit,group");
    const auto it = index.find(trim(cells[0]));
    if (it == index.end()) throw ParseError(line_no, 1, "unknown unit '" + trim(cells[0]) + "'");
    const auto g = to_double(trim(cells[1]));
    if (!g || *g < 1 || *g != std::floor(*g)) throw ParseError(line_no, 2, "group must be a positive integer");
    if (labels[static_cast<std::size_t>(it->second)] >= 0) {
      throw Error(ErrorCode::DuplicateCell, "unit '" + it->first + "' listed twice");
    }
    labels[static_cast<std::size_t>(it->second)] = static_cast<int>(*g) - 1;
    groups = std::max(groups, static_cast<int>(*g));
  }
  for (int i = 0; i < data.n_units(); ++i) {
    if (labels[static_cast<std::size_t>(i)] < 0) {
      throw Error(ErrorCode::InvalidInput, "truth file has no group for unit '" + data.unit_labels()[static_cast<std::size_t>(i)] + "'");
    }
  }
  return GroupAssignment(std::move(labels), groups);
}

}  // namespace wgfe
